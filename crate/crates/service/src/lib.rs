//! Session-oriented HTTP API over the chromaprop pipeline.
//!
//! | method | path                              | result                           |
//! |--------|-----------------------------------|----------------------------------|
//! | POST   | `/sessions`                       | palette and session id           |
//! | POST   | `/sessions/{id}/edit`             | edited image, deltas and energy  |
//! | GET    | `/sessions/{id}/weights/{entry}`  | grayscale weight map PNG         |
//! | DELETE | `/sessions/{id}`                  | `204`, always                    |
//!
//! A session holds the image, its semantic field, palette, RBF model and the
//! full weight field, all computed once on upload. Every edit solves from the
//! original image, so edits never accumulate.

mod api;
mod config;
mod error;
mod session;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::DefaultBodyLimit;
use axum::http::{HeaderName, HeaderValue, Method};
use axum::routing::{delete, get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use api::{
    ConfigQuery, CreateRequest, CreateResponse, EditResponse, HEADER_DELTAS, HEADER_ENERGY, HEADER_FIDELITY,
    HEADER_PROPAGATION,
};
pub use config::{ServiceConfig, DEFAULT_MAX_PIXELS, DEFAULT_SESSION_TTL};
pub use error::ServiceError;
pub use session::{Session, SessionStore};

/// Request bodies above this size are refused before parsing.
const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

pub struct AppState {
    pub config: ServiceConfig,
    pub sessions: SessionStore,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: SessionStore::new(config.session_ttl),
            config,
        })
    }
}

fn cors(config: &ServiceConfig) -> Result<CorsLayer, ServiceError> {
    let origin = match &config.cors_origin {
        None => AllowOrigin::from(Any),
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|_| ServiceError::Config(format!("bad CORS origin {o:?}")))?,
        ),
    };
    Ok(CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers(Any)
        .expose_headers([HEADER_ENERGY, HEADER_FIDELITY, HEADER_PROPAGATION, HEADER_DELTAS].map(HeaderName::from_static)))
}

pub fn router(state: Arc<AppState>) -> Result<Router, ServiceError> {
    let cors = cors(&state.config)?;
    Ok(Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", delete(api::delete_session))
        .route("/sessions/{id}/edit", post(api::edit))
        .route("/sessions/{id}/weights/{entry}", get(api::weights))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state))
}

/// Periodically drops idle sessions until the process exits.
pub fn spawn_eviction(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.config.session_ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        loop {
            ticker.tick().await;
            let evicted = state.sessions.evict_idle(Instant::now());
            if evicted > 0 {
                log::info!("evicted {evicted} idle sessions");
            }
        }
    })
}

pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = config.addr();
    let state = AppState::new(config);
    let app = router(Arc::clone(&state))?;
    spawn_eviction(state);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
