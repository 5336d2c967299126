use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chromaprop::editor::EditOptions;
use chromaprop::pipeline::Prepared;

/// Precomputed per-image state. Never modified after creation.
#[derive(Debug)]
pub struct Session {
    pub prepared: Prepared,
    pub edit: EditOptions,
    pub created_at: Instant,
}

struct Slot {
    session: Arc<Session>,
    last_used: Mutex<Instant>,
}

/// Session table with idle eviction.
pub struct SessionStore {
    ttl: Duration,
    slots: RwLock<HashMap<String, Slot>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            slots: RwLock::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: Session) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let slot = Slot {
            session: Arc::new(session),
            last_used: Mutex::new(Instant::now()),
        };
        self.slots.write().expect("session lock").insert(id.clone(), slot);
        id
    }

    /// Looks up a session and marks it as used.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let slots = self.slots.read().expect("session lock");
        let slot = slots.get(id)?;
        *slot.last_used.lock().expect("session clock") = Instant::now();
        Some(Arc::clone(&slot.session))
    }

    pub fn remove(&self, id: &str) -> bool {
        self.slots.write().expect("session lock").remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.read().expect("session lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops sessions idle since before `now - ttl`; returns how many went.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let mut slots = self.slots.write().expect("session lock");
        let before = slots.len();
        slots.retain(|_, slot| now.duration_since(*slot.last_used.lock().expect("session clock")) <= self.ttl);
        before - slots.len()
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }
}
