//! HTTP API over a checkpoint that is loaded once and then shared read-only.
//!
//! - `POST /api/v1/generate`: grid of 0/1/null plus locks → filled grid
//! - `POST /api/v1/metrics`: complete grid → pattern metrics
//! - `GET /api/v1/health`: status and checkpoint fingerprint
//!
//! Every route answers 503 until a model is installed.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use maskbeat_core::decode::{decode, GenerationRequest};
use maskbeat_core::metrics::PatternMetrics;
use maskbeat_core::model::{ModelConfig, Weights};
use maskbeat_core::pattern::{Cell, DrumPattern, MaskedPattern, INSTRUMENTS, STEPS};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::format::parse_grid;

pub const MAX_ITERATIONS: u64 = 64;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.25, 2.5);

/// Linear map from a creativity slider position in [0, 1] to a temperature.
pub fn slider_to_temperature(position: f64) -> f64 {
    let (lo, hi) = TEMPERATURE_RANGE;
    lo + (hi - lo) * position.clamp(0.0, 1.0)
}

#[derive(Debug)]
pub struct LoadedModel {
    pub config: ModelConfig,
    pub weights: Weights,
    pub fingerprint: String,
}

impl From<Checkpoint> for LoadedModel {
    fn from(c: Checkpoint) -> Self {
        let fingerprint = c.fingerprint();
        LoadedModel { config: c.model, weights: c.weights, fingerprint }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<OnceLock<Arc<LoadedModel>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let s = Self::new();
        s.install(model);
        s
    }

    /// First install wins; later calls are ignored.
    pub fn install(&self, model: LoadedModel) {
        let _ = self.model.set(Arc::new(model));
    }

    fn model(&self) -> std::result::Result<Arc<LoadedModel>, ApiError> {
        self.model.get().cloned().ok_or(ApiError::NotReady)
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotReady,
    BadRequest { field: String, message: String },
    Internal(String),
}

impl ApiError {
    fn bad(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::BadRequest { field: field.into(), message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Format { field, message, .. } => ApiError::BadRequest { field, message },
            Error::Core(maskbeat_core::Error::Request(m)) => ApiError::bad("request", m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::NotReady => {
                (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "model not loaded"}))).into_response()
            }
            ApiError::BadRequest { field, message } => (
                StatusCode::BAD_REQUEST,
                Json(json!({"error": format!("{field}: {message}"), "field": field})),
            )
                .into_response(),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": m}))).into_response(),
        }
    }
}

fn parse_body(body: &Bytes) -> std::result::Result<serde_json::Map<String, Value>, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad("body", e.to_string()))?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::bad("body", "expected a JSON object")),
    }
}

fn bool_array(v: &Value, field: &str, len: usize) -> std::result::Result<Vec<bool>, ApiError> {
    let arr = v.as_array().ok_or_else(|| ApiError::bad(field, "expected an array"))?;
    if arr.len() != len {
        return Err(ApiError::bad(field, format!("expected {len} entries, got {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(k, x)| x.as_bool().ok_or_else(|| ApiError::bad(format!("{field}[{k}]"), "expected a boolean")))
        .collect()
}

/// Validated generate body.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateBody {
    pub initial: MaskedPattern,
    pub temperature: f64,
    pub iterations: usize,
    pub seed: Option<u64>,
}

pub fn parse_generate_body(body: &Bytes) -> std::result::Result<GenerateBody, ApiError> {
    let obj = parse_body(body)?;
    let grid_value = obj.get("grid").ok_or_else(|| ApiError::bad("grid", "missing"))?;
    let grid = parse_grid(grid_value, "request", true)?;

    let mut locks = [[false; STEPS]; INSTRUMENTS];
    let cell_locks = obj.get("locks").filter(|v| !v.is_null());
    let row_locks = obj.get("row_locks").filter(|v| !v.is_null());
    match (cell_locks, row_locks) {
        (Some(_), Some(_)) => return Err(ApiError::bad("locks", "give either locks or row_locks, not both")),
        (Some(v), None) => {
            let rows = v.as_array().ok_or_else(|| ApiError::bad("locks", "expected an array of rows"))?;
            if rows.len() != INSTRUMENTS {
                return Err(ApiError::bad("locks", format!("expected {INSTRUMENTS} rows, got {}", rows.len())));
            }
            for (i, row) in rows.iter().enumerate() {
                for (t, on) in bool_array(row, &format!("locks[{i}]"), STEPS)?.into_iter().enumerate() {
                    locks[i][t] = on;
                }
            }
        }
        (None, Some(v)) => {
            for (i, on) in bool_array(v, "row_locks", INSTRUMENTS)?.into_iter().enumerate() {
                locks[i] = [on; STEPS];
            }
        }
        (None, None) => {}
    }

    let temperature = match obj.get("temperature").filter(|v| !v.is_null()) {
        None => 1.0,
        Some(v) => match v.as_f64() {
            Some(t) if t > 0.0 && t.is_finite() => t,
            _ => return Err(ApiError::bad("temperature", format!("must be a number > 0, got {v}"))),
        },
    };
    let iterations = match obj.get("iterations").filter(|v| !v.is_null()) {
        None => 10,
        Some(v) => match v.as_u64() {
            Some(k) if (1..=MAX_ITERATIONS).contains(&k) => k as usize,
            _ => return Err(ApiError::bad("iterations", format!("must be an integer in 1..={MAX_ITERATIONS}, got {v}"))),
        },
    };
    let seed = match obj.get("seed").filter(|v| !v.is_null()) {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| ApiError::bad("seed", "must be an unsigned integer"))?),
    };

    let mut initial = MaskedPattern::fully_masked();
    for i in 0..INSTRUMENTS {
        for t in 0..STEPS {
            match grid[i][t] {
                None if locks[i][t] => {
                    return Err(ApiError::bad(format!("grid[{i}][{t}]"), "locked cell must not be null"));
                }
                None => {}
                Some(hit) => {
                    initial.set_cell(i, t, if hit { Cell::Hit } else { Cell::Silent }).map_err(Error::from)?;
                    if locks[i][t] {
                        initial.lock(i, t).map_err(Error::from)?;
                    }
                }
            }
        }
    }
    Ok(GenerateBody { initial, temperature, iterations, seed })
}

fn grid_json(p: &DrumPattern) -> Value {
    Value::Array((0..INSTRUMENTS).map(|i| Value::from((0..STEPS).map(|t| u8::from(p.get(i, t))).collect::<Vec<_>>())).collect())
}

async fn generate(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<Value>, ApiError> {
    let model = state.model()?;
    let req = parse_generate_body(&body)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let request = GenerationRequest {
        temperature: req.temperature,
        iterations: req.iterations,
        ..GenerationRequest::new(req.initial, seed)
    };
    let out = tokio::task::spawn_blocking(move || decode(&model.config, &model.weights, &request))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(Error::from)?;
    Ok(Json(json!({
        "grid": grid_json(&out.pattern),
        "confidence": out.confidence.iter().map(|row| row.to_vec()).collect::<Vec<_>>(),
        "trace_summary": {
            "initial_masked": out.trace.initial_masked,
            "iterations": out.trace.steps.len(),
            "masked_counts": out.trace.masked_counts(),
        },
        "seed": seed,
    })))
}

async fn metrics(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<Value>, ApiError> {
    state.model()?;
    let obj = parse_body(&body)?;
    let grid = parse_grid(obj.get("grid").ok_or_else(|| ApiError::bad("grid", "missing"))?, "request", false)?;
    let p = DrumPattern::from_fn(|i, t| grid[i][t] == Some(true));
    let m = PatternMetrics::of(&p);
    Ok(Json(json!({
        "beat_strength": m.beat_strength,
        "pattern_repetition": m.pattern_repetition,
        "instrument_balance": m.instrument_balance,
    })))
}

async fn health(State(state): State<AppState>) -> std::result::Result<Json<Value>, ApiError> {
    let model = state.model()?;
    Ok(Json(json!({"status": "ok", "model_fingerprint": model.fingerprint})))
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/generate", post(generate))
        .route("/api/v1/metrics", post(metrics))
        .route("/api/v1/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind, start answering (503 while loading), then load the checkpoint.
pub async fn serve(ckpt: PathBuf, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let state = AppState::new();
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Usage(format!("bind {addr}: {e}")))?;
    let loader = state.clone();
    let load = tokio::task::spawn_blocking(move || Checkpoint::load(&ckpt).map(|c| loader.install(c.into())));
    let app = router(state, static_dir);
    log::info!("listening on {addr}");
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    load.await.map_err(|e| Error::Usage(e.to_string()))??;
    log::info!("checkpoint loaded");
    server
        .await
        .map_err(|e| Error::Usage(e.to_string()))?
        .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))
}
