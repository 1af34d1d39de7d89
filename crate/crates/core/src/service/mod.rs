//! HTTP annotation collection service.
//!
//! | route | purpose |
//! |---|---|
//! | `GET /api/next?annotator=ID` | next sample for an annotator, or done |
//! | `POST /api/label` | submit `{annotator, sample_id, behavioral, emotional}` |
//! | `GET /api/image/{sample_id}` | PNG bytes of a pool image |
//! | `GET /api/export` | all records, one JSON object per line |
//! | `GET /api/progress` | per-annotator and per-sample counts |
//! | `GET /api/definitions` | dimension definitions shown to annotators |
//!
//! Every route except definitions needs `Authorization: Bearer <token>`; the
//! image route also accepts `?token=` so it can be used from an `<img>` tag.

mod store;

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Cursor};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use store::{annotator_queue, annotator_seed, AssignmentState, NextSample, Progress, SessionConfig, Store, StoreError};

use crate::annotation::{definitions, write_records, SampleInfo};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorEntry {
    pub id: String,
    pub token: String,
}

/// Service configuration, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub session: SessionConfig,
    pub annotators: Vec<AnnotatorEntry>,
    /// JSON-lines file of `{sample_id, image_path, subject_id}`; image paths
    /// are relative to the file's directory.
    pub pool: PathBuf,
    pub log: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

/// Reads a sample pool file.
pub fn read_pool(path: &Path) -> Result<Vec<SampleInfo>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleInfo = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i,
            reason: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

pub struct AppState {
    store: Mutex<Store>,
    tokens: HashMap<String, String>,
    image_root: PathBuf,
}

impl AppState {
    pub fn new(store: Store, annotators: &[AnnotatorEntry], image_root: PathBuf) -> Self {
        AppState {
            store: Mutex::new(store),
            tokens: annotators.iter().map(|a| (a.token.clone(), a.id.clone())).collect(),
            image_root,
        }
    }

    /// Opens the store named by `cfg`; relative paths resolve against `base`.
    pub fn from_config(cfg: &ServiceConfig, base: &Path) -> Result<Self> {
        let pool_path = base.join(&cfg.pool);
        let pool = read_pool(&pool_path)?;
        let ids: Vec<String> = cfg.annotators.iter().map(|a| a.id.clone()).collect();
        let store = Store::open(cfg.session.clone(), pool, &ids, &base.join(&cfg.log))
            .map_err(|e| Error::Validation(e.to_string()))?;
        let image_root = pool_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(AppState::new(store, &cfg.annotators, image_root))
    }

    fn store(&self) -> std::sync::MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    Forbidden(String),
    Store(StoreError),
    Internal(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Store(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "missing or unknown token".to_string()),
            ApiError::Forbidden(m) => (StatusCode::FORBIDDEN, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
            ApiError::Store(e) => {
                let status = match &e {
                    StoreError::UnknownAnnotator(_) | StoreError::UnknownSample(_) => StatusCode::NOT_FOUND,
                    StoreError::Duplicate { .. } => StatusCode::CONFLICT,
                    StoreError::NotIssued { .. } => StatusCode::BAD_REQUEST,
                    StoreError::InvalidLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
                    StoreError::Config(_) | StoreError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, e.to_string())
            }
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

type Shared = Arc<AppState>;

fn caller(state: &AppState, headers: &HeaderMap, query_token: Option<&str>) -> Result<String, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .or(query_token)
        .ok_or(ApiError::Unauthorized)?;
    state.tokens.get(token.trim()).cloned().ok_or(ApiError::Unauthorized)
}

fn same_annotator(state: &AppState, who: &str, claimed: &str) -> Result<(), ApiError> {
    if state.store().state(claimed).is_none() {
        return Err(StoreError::UnknownAnnotator(claimed.to_string()).into());
    }
    if who != claimed {
        return Err(ApiError::Forbidden(format!("token does not belong to {claimed}")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next(State(st): State<Shared>, headers: HeaderMap, Query(q): Query<NextQuery>) -> Result<Json<NextSample>, ApiError> {
    let who = caller(&st, &headers, None)?;
    same_annotator(&st, &who, &q.annotator)?;
    Ok(Json(st.store().next_sample(&q.annotator)?))
}

#[derive(Debug, Deserialize, Serialize)]
pub struct LabelRequest {
    pub annotator: String,
    pub sample_id: String,
    pub behavioral: String,
    pub emotional: String,
}

async fn label(State(st): State<Shared>, headers: HeaderMap, Json(req): Json<LabelRequest>) -> Result<Response, ApiError> {
    let who = caller(&st, &headers, None)?;
    same_annotator(&st, &who, &req.annotator)?;
    let rec = st
        .store()
        .submit(&req.annotator, &req.sample_id, &req.behavioral, &req.emotional)?;
    Ok((StatusCode::OK, Json(serde_json::json!({ "status": "ok", "record": rec }))).into_response())
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn image(
    State(st): State<Shared>,
    headers: HeaderMap,
    UrlPath(sample_id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    caller(&st, &headers, q.token.as_deref())?;
    let rel = st
        .store()
        .sample(&sample_id)
        .map(|s| s.image_path.clone())
        .ok_or_else(|| StoreError::UnknownSample(sample_id.clone()))?;
    let path = st.image_root.join(rel);
    let img = image::open(&path).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export(State(st): State<Shared>, headers: HeaderMap) -> Result<Response, ApiError> {
    caller(&st, &headers, None)?;
    let records = st.store().export();
    let mut body = Vec::new();
    write_records(&records, &mut body).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn progress(State(st): State<Shared>, headers: HeaderMap) -> Result<Json<Progress>, ApiError> {
    caller(&st, &headers, None)?;
    Ok(Json(st.store().progress()))
}

async fn defs() -> Json<serde_json::Value> {
    Json(definitions())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/next", get(next))
        .route("/api/label", post(label))
        .route("/api/image/{sample_id}", get(image))
        .route("/api/export", get(export))
        .route("/api/progress", get(progress))
        .route("/api/definitions", get(defs))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub fn serve(state: AppState, bind: &str) -> Result<()> {
    let addr: SocketAddr = bind
        .parse()
        .map_err(|_| Error::Validation(format!("bad bind address {bind}")))?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(bind, e))?;
        log::info!("annotation service listening on {addr}");
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(bind, e))
    })
}
