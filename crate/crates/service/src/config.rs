use std::env;
use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use crate::ServiceError;

pub const DEFAULT_MAX_PIXELS: usize = 4_000_000;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

/// Runtime settings, read from `CHROMAPROP_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    /// Sessions idle for longer than this are dropped.
    pub session_ttl: Duration,
    /// Uploads with more pixels are rejected with 413.
    pub max_pixels: usize,
    /// Allowed CORS origin; `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::from([127, 0, 0, 1]),
            port: 8080,
            session_ttl: DEFAULT_SESSION_TTL,
            max_pixels: DEFAULT_MAX_PIXELS,
            cors_origin: None,
        }
    }
}

fn parse_var<T: std::str::FromStr>(
    lookup: &impl Fn(&str) -> Option<String>,
    name: &str,
) -> Result<Option<T>, ServiceError> {
    match lookup(name) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ServiceError::Config(format!("{name}={raw:?} is not valid"))),
    }
}

impl ServiceConfig {
    /// Reads `CHROMAPROP_BIND`, `CHROMAPROP_PORT`, `CHROMAPROP_SESSION_TTL_SECS`,
    /// `CHROMAPROP_MAX_PIXELS` and `CHROMAPROP_CORS_ORIGIN`.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_lookup(|name| env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let mut cfg = Self::default();
        if let Some(v) = parse_var(&lookup, "CHROMAPROP_BIND")? {
            cfg.bind = v;
        }
        if let Some(v) = parse_var(&lookup, "CHROMAPROP_PORT")? {
            cfg.port = v;
        }
        if let Some(secs) = parse_var::<u64>(&lookup, "CHROMAPROP_SESSION_TTL_SECS")? {
            cfg.session_ttl = Duration::from_secs(secs);
        }
        if let Some(v) = parse_var::<usize>(&lookup, "CHROMAPROP_MAX_PIXELS")? {
            if v == 0 {
                return Err(ServiceError::Config("CHROMAPROP_MAX_PIXELS must be positive".into()));
            }
            cfg.max_pixels = v;
        }
        cfg.cors_origin = lookup("CHROMAPROP_CORS_ORIGIN").filter(|s| !s.is_empty());
        Ok(cfg)
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }
}
