use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chromaprop::config::PipelineConfig;
use chromaprop::imgio::{decode_png, encode_png, PaletteDocument};
use chromaprop::pipeline::{prepare_field, Prepared};
use chromaprop::{RawFeatureTensor, StrokeSet};
use serde::{Deserialize, Serialize};

use crate::session::Session;
use crate::{AppState, ServiceError};

pub const HEADER_ENERGY: &str = "x-chromaprop-energy";
pub const HEADER_FIDELITY: &str = "x-chromaprop-fidelity";
pub const HEADER_PROPAGATION: &str = "x-chromaprop-propagation";
pub const HEADER_DELTAS: &str = "x-chromaprop-deltas";

/// Parameter overrides accepted in the query string of `POST /sessions`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigQuery {
    pub wc: Option<f64>,
    pub ws: Option<f64>,
    pub threshold: Option<f64>,
    pub superpixels: Option<usize>,
    pub compactness: Option<f64>,
    pub samples: Option<usize>,
    pub disable_propagation: Option<bool>,
}

impl ConfigQuery {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.wc {
            cfg.palette.w_c = v;
        }
        if let Some(v) = self.ws {
            cfg.palette.w_s = v;
        }
        if let Some(v) = self.threshold {
            cfg.palette.t = v;
        }
        if let Some(v) = self.superpixels {
            cfg.superpixels.n_target = v;
        }
        if let Some(v) = self.compactness {
            cfg.superpixels.compactness = v;
        }
        if let Some(v) = self.samples {
            cfg.edit.sample_count = v;
        }
        if let Some(v) = self.disable_propagation {
            cfg.edit.disable_propagation = v;
        }
    }
}

/// JSON form of `POST /sessions`; binary payloads are base64.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub image: String,
    #[serde(default)]
    pub features: Option<String>,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub palette: PaletteDocument,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    /// Base64 PNG of the edited image.
    pub image: String,
    pub deltas: Vec<[f64; 3]>,
    pub energy: f64,
    pub fidelity: f64,
    pub propagation: f64,
    pub palette: PaletteDocument,
}

fn content_type(headers: &HeaderMap) -> String {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
        .unwrap_or_default()
}

fn wants_png(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|v| v.split(';').next().unwrap_or("").trim().eq_ignore_ascii_case("image/png"))
}

/// Width and height from a PNG header, without decoding pixels.
fn png_dimensions(bytes: &[u8]) -> Option<(usize, usize)> {
    const SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";
    if bytes.len() < 24 || &bytes[..8] != SIGNATURE || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w as usize, h as usize))
}

fn decode_base64(field: &str, text: &str) -> Result<Vec<u8>, ServiceError> {
    BASE64
        .decode(text.trim())
        .map_err(|e| ServiceError::BadRequest(format!("{field}: invalid base64 ({e})")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    query: Result<Query<ConfigQuery>, axum::extract::rejection::QueryRejection>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CreateResponse>, ServiceError> {
    let Query(query) = query.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let (png, features, mut cfg) = match content_type(&headers).as_str() {
        "image/png" => (body.to_vec(), None, PipelineConfig::default()),
        "application/json" => {
            let req: CreateRequest =
                serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
            let features = req.features.as_deref().map(|f| decode_base64("features", f)).transpose()?;
            (decode_base64("image", &req.image)?, features, req.config.unwrap_or_default())
        }
        other => {
            return Err(ServiceError::BadRequest(format!(
                "expected image/png or application/json, got {other:?}"
            )))
        }
    };
    query.apply(&mut cfg);
    cfg.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;

    let (w, h) = png_dimensions(&png).ok_or_else(|| ServiceError::BadRequest("body is not a PNG image".into()))?;
    let limit = state.config.max_pixels;
    if w.saturating_mul(h) > limit {
        return Err(ServiceError::TooLarge { pixels: w * h, limit });
    }

    let prepared = blocking(move || {
        let image = decode_png(&png).map_err(ServiceError::from_upload)?;
        let raw = features
            .map(|bytes| RawFeatureTensor::from_bytes(&bytes))
            .transpose()
            .map_err(ServiceError::from_upload)?;
        let field = prepare_field(&image, raw.as_ref(), cfg.fallback_blur_sigma).map_err(ServiceError::from_upload)?;
        Prepared::extract(image, field, &cfg).map_err(ServiceError::from_upload)
    })
    .await?;

    let response = CreateResponse {
        session_id: String::new(),
        k: prepared.model.k(),
        width: prepared.image.width(),
        height: prepared.image.height(),
        palette: PaletteDocument::from(prepared.palette()),
    };
    let id = state.sessions.insert(Session {
        prepared,
        edit: cfg.edit,
        created_at: Instant::now(),
    });
    log::info!("session {id} created with k = {}", response.k);
    Ok(Json(CreateResponse {
        session_id: id,
        ..response
    }))
}

fn session(state: &AppState, id: &str) -> Result<Arc<Session>, ServiceError> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
}

fn header_value(v: String) -> Result<HeaderValue, ServiceError> {
    HeaderValue::from_str(&v).map_err(|e| ServiceError::Internal(e.to_string()))
}

pub async fn edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let session = session(&state, &id)?;
    let text = std::str::from_utf8(&body).map_err(|_| ServiceError::BadRequest("stroke set is not UTF-8".into()))?;
    let strokes = StrokeSet::from_json(text).map_err(ServiceError::from_edit)?;
    let outcome = blocking(move || {
        session
            .prepared
            .edit(&strokes, &session.edit)
            .map_err(ServiceError::from_edit)
    })
    .await?;
    let png = encode_png(&outcome.image);
    let sol = &outcome.solution;

    if wants_png(&headers) {
        let deltas = serde_json::to_string(&sol.deltas).expect("deltas serialize");
        let mut response = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], png).into_response();
        let h = response.headers_mut();
        h.insert(HEADER_ENERGY, header_value(sol.energy.to_string())?);
        h.insert(HEADER_FIDELITY, header_value(sol.fidelity.to_string())?);
        h.insert(HEADER_PROPAGATION, header_value(sol.propagation.to_string())?);
        h.insert(HEADER_DELTAS, header_value(deltas)?);
        return Ok(response);
    }
    Ok(Json(EditResponse {
        image: BASE64.encode(&png),
        deltas: sol.deltas.clone(),
        energy: sol.energy,
        fidelity: sol.fidelity,
        propagation: sol.propagation,
        palette: PaletteDocument::from(&sol.edited_palette),
    })
    .into_response())
}

pub async fn weights(
    State(state): State<Arc<AppState>>,
    Path((id, entry)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    let session = session(&state, &id)?;
    let entry: usize = entry
        .parse()
        .map_err(|_| ServiceError::BadRequest(format!("entry {entry:?} is not an index")))?;
    let k = session.prepared.model.k();
    if entry >= k {
        return Err(ServiceError::EntryOutOfRange { entry, k });
    }
    let png = blocking(move || {
        session
            .prepared
            .weights
            .entry_png(entry)
            .map_err(|e| ServiceError::Internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> StatusCode {
    if state.sessions.remove(&id) {
        log::info!("session {id} deleted");
    }
    StatusCode::NO_CONTENT
}
