//! HTTP JSON API.
//!
//! * `GET /api/pairs?token=T`: the study's pairs in this rater's order.
//! * `GET /api/audio/{pair_id}.{original|cloned}`: WAV bytes.
//! * `POST /api/ratings`: `{rater_id, pair_id, quality, similarity}`.
//! * `GET /api/aggregate`: current [`MosAggregate`](crate::MosAggregate).
//!
//! Errors are JSON objects `{"error": message, "field": name?}`: 400 for a
//! body that is not a rating object, 422 for a score outside 1 to 5 (naming
//! the field), 404 for an unknown pair or audio id.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::{aggregate, RatingRecord, RatingStore, Study};

#[derive(Clone)]
pub struct AppState {
    pub study: Arc<Study>,
    pub store: Arc<Mutex<RatingStore>>,
    /// Mixed into every rater's ordering seed.
    pub seed: u64,
}

impl AppState {
    pub fn new(study: Study, store: RatingStore, seed: u64) -> Self {
        Self {
            study: Arc::new(study),
            store: Arc::new(Mutex::new(store)),
            seed,
        }
    }
}

struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(status: StatusCode, field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: Some(field),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.field {
            Some(f) => json!({ "error": self.message, "field": f }),
            None => json!({ "error": self.message }),
        };
        (self.status, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    tracing::error!(error = %e, "request failed");
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Deserialize)]
struct PairsQuery {
    token: Option<String>,
}

#[derive(Serialize)]
struct PairView<'a> {
    pair_id: &'a str,
    original_url: String,
    cloned_url: String,
}

async fn pairs(State(st): State<AppState>, Query(q): Query<PairsQuery>) -> Result<Response, ApiError> {
    let token = q
        .token
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| ApiError::field(StatusCode::BAD_REQUEST, "token", "a session token is required"))?;
    let order: Vec<PairView> = st
        .study
        .session_order(&token, st.seed)
        .into_iter()
        .map(|p| PairView {
            pair_id: &p.pair_id,
            original_url: format!("/api/audio/{}.original", p.pair_id),
            cloned_url: format!("/api/audio/{}.cloned", p.pair_id),
        })
        .collect();
    Ok(Json(json!({ "token": token, "pairs": order })).into_response())
}

async fn audio(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown audio {id}"));
    let (pair_id, kind) = id.rsplit_once('.').ok_or_else(not_found)?;
    let pair = st.study.get(pair_id).ok_or_else(not_found)?;
    let path = match kind {
        "original" => &pair.original,
        "cloned" => &pair.cloned,
        _ => return Err(not_found()),
    };
    let bytes = tokio::fs::read(path).await.map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

fn text_field(obj: &serde_json::Map<String, Value>, name: &'static str) -> Result<String, ApiError> {
    match obj.get(name) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(ApiError::field(StatusCode::BAD_REQUEST, name, format!("{name} must not be empty"))),
        Some(_) => Err(ApiError::field(StatusCode::BAD_REQUEST, name, format!("{name} must be a string"))),
        None => Err(ApiError::field(StatusCode::BAD_REQUEST, name, format!("{name} is missing"))),
    }
}

fn score_field(obj: &serde_json::Map<String, Value>, name: &'static str) -> Result<u8, ApiError> {
    match obj.get(name) {
        Some(Value::Number(n)) => match n.as_i64() {
            Some(v @ 1..=5) => Ok(v as u8),
            _ => Err(ApiError::field(
                StatusCode::UNPROCESSABLE_ENTITY,
                name,
                format!("{name} must be an integer from 1 to 5, got {n}"),
            )),
        },
        Some(_) => Err(ApiError::field(StatusCode::BAD_REQUEST, name, format!("{name} must be a number"))),
        None => Err(ApiError::field(StatusCode::BAD_REQUEST, name, format!("{name} is missing"))),
    }
}

async fn post_rating(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("body is not JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "body must be a JSON object"));
    };
    const KNOWN: [&str; 4] = ["rater_id", "pair_id", "quality", "similarity"];
    if let Some(extra) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unexpected field {extra}")));
    }
    let rater_id = text_field(&obj, "rater_id")?;
    let pair_id = text_field(&obj, "pair_id")?;
    let quality = score_field(&obj, "quality")?;
    let similarity = score_field(&obj, "similarity")?;
    if st.study.get(&pair_id).is_none() {
        return Err(ApiError::field(StatusCode::NOT_FOUND, "pair_id", format!("unknown pair {pair_id}")));
    }
    let record = RatingRecord {
        rater_id,
        pair_id,
        quality,
        similarity,
        timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
    };
    st.store.lock().map_err(internal)?.put(record.clone()).map_err(internal)?;
    tracing::info!(rater = %record.rater_id, pair = %record.pair_id, "rating stored");
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_aggregate(State(st): State<AppState>) -> Result<Response, ApiError> {
    let records = st.store.lock().map_err(internal)?.records();
    let agg = aggregate(&records, st.study.pairs()).map_err(internal)?;
    Ok(Json(agg).into_response())
}

/// The API routes, plus the rating UI bundle at `/` when `static_dir` is
/// given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pairs", get(pairs))
        .route("/api/audio/{id}", get(audio))
        .route("/api/ratings", post(post_rating))
        .route("/api/aggregate", get(get_aggregate))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "rating service listening");
    axum::serve(listener, router(state, static_dir)).await
}
