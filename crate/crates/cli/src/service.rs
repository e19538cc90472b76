// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP front end for the engine.
//!
//! | route            | body                                   |
//! |------------------|----------------------------------------|
//! | `GET /health`    | `{status, model_id}`; 503 until loaded |
//! | `GET /info`      | limits and the colour scale            |
//! | `POST /analyze`  | [`AnalyzeRequest`] → [`AnalyzeResponse`] |
//! | `POST /compare`  | [`CompareRequest`] → [`CompareResponse`] |
//!
//! Errors are `{"error": {"status", "code", "message"}}`. Analyses run on
//! the blocking pool behind a semaphore of `workers` permits; at most
//! `queue` more requests wait, the rest get 429.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cxaffinity::backend::BackendError;
use cxaffinity::engine::{self, AffinityReport, EngineError, EngineOptions};
use cxaffinity::tokenization::{self, TokenizeError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::backend::{BackendSpec, Loaded};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub backend: Option<BackendSpec>,
    /// Longest sentence accepted, in words.
    pub max_words: usize,
    /// Longest sentence for which a matrix is computed.
    pub matrix_max_words: usize,
    pub workers: usize,
    pub queue: usize,
    pub body_limit_bytes: usize,
    /// Allowed origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub batch_size: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            backend: None,
            max_words: 128,
            matrix_max_words: 40,
            workers: 2,
            queue: 16,
            body_limit_bytes: 64 * 1024,
            cors_origins: Vec::new(),
            batch_size: 32,
        }
    }
}

impl ServeConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if let Some(BackendSpec::Mock(p) | BackendSpec::Model(p)) = cfg.backend.as_mut() {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `CXAFF_HOST`, `CXAFF_PORT`, `CXAFF_BACKEND`, `CXAFF_MAX_WORDS`,
    /// `CXAFF_MATRIX_MAX_WORDS`, `CXAFF_WORKERS`, `CXAFF_QUEUE`,
    /// `CXAFF_CORS_ORIGINS` (comma separated).
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, CliError> {
            v.trim()
                .parse()
                .map_err(|_| CliError::Runtime(format!("{name}: invalid value {v:?}")))
        }
        if let Some(v) = var("CXAFF_HOST") {
            self.host = v;
        }
        if let Some(v) = var("CXAFF_PORT") {
            self.port = num("CXAFF_PORT", &v)?;
        }
        if let Some(v) = var("CXAFF_BACKEND") {
            self.backend = Some(v.parse().map_err(CliError::Runtime)?);
        }
        if let Some(v) = var("CXAFF_MAX_WORDS") {
            self.max_words = num("CXAFF_MAX_WORDS", &v)?;
        }
        if let Some(v) = var("CXAFF_MATRIX_MAX_WORDS") {
            self.matrix_max_words = num("CXAFF_MATRIX_MAX_WORDS", &v)?;
        }
        if let Some(v) = var("CXAFF_WORKERS") {
            self.workers = num("CXAFF_WORKERS", &v)?;
        }
        if let Some(v) = var("CXAFF_QUEUE") {
            self.queue = num("CXAFF_QUEUE", &v)?;
        }
        if let Some(v) = var("CXAFF_CORS_ORIGINS") {
            self.cors_origins = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub sentence: String,
    #[serde(default)]
    pub compute_matrix: bool,
    #[serde(default)]
    pub extra_masks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    #[serde(flatten)]
    pub report: AffinityReport,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub sentence_a: String,
    pub sentence_b: String,
    #[serde(default)]
    pub compute_matrix: bool,
    #[serde(default)]
    pub extra_masks_a: Option<Vec<usize>>,
    #[serde(default)]
    pub extra_masks_b: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub a: AnalyzeResponse,
    pub b: AnalyzeResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn too_long(message: impl Into<String>) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, message)
    }

    fn code(&self) -> &'static str {
        match self.status {
            StatusCode::BAD_REQUEST => "bad_request",
            StatusCode::PAYLOAD_TOO_LARGE => "too_long",
            StatusCode::TOO_MANY_REQUESTS => "busy",
            StatusCode::SERVICE_UNAVAILABLE => "unavailable",
            StatusCode::NOT_FOUND => "not_found",
            _ => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"status": self.status.as_u16(), "code": self.code(), "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        // body-limit rejections keep their 413; everything else is malformed input
        let status = if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            StatusCode::PAYLOAD_TOO_LARGE
        } else {
            StatusCode::BAD_REQUEST
        };
        Self::new(status, r.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::Backend(BackendError::SequenceTooLong { .. }) => Self::too_long(e.to_string()),
            EngineError::Tokenize(_) | EngineError::WordOutOfRange { .. } => Self::bad_request(e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

#[derive(Clone)]
pub enum Phase {
    Loading,
    Ready(Loaded),
    Failed(String),
}

pub struct AppState {
    pub config: ServeConfig,
    phase: RwLock<Phase>,
    permits: Semaphore,
    admitted: AtomicUsize,
}

impl AppState {
    pub fn new(config: ServeConfig) -> Arc<Self> {
        Arc::new(Self {
            permits: Semaphore::new(config.workers.max(1)),
            config,
            phase: RwLock::new(Phase::Loading),
            admitted: AtomicUsize::new(0),
        })
    }

    pub fn set_phase(&self, phase: Phase) {
        *self.phase.write().unwrap() = phase;
    }

    fn loaded(&self) -> Result<Loaded, ApiError> {
        match &*self.phase.read().unwrap() {
            Phase::Ready(l) => Ok(l.clone()),
            Phase::Loading => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model is loading")),
            Phase::Failed(e) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("model failed to load: {e}"))),
        }
    }

    fn admit(self: &Arc<Self>) -> Result<Admission, ApiError> {
        let cap = self.config.workers.max(1) + self.config.queue;
        if self.admitted.fetch_add(1, Ordering::SeqCst) >= cap {
            self.admitted.fetch_sub(1, Ordering::SeqCst);
            return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "analysis queue is full"));
        }
        Ok(Admission(self.clone()))
    }
}

struct Admission(Arc<AppState>);

impl Drop for Admission {
    fn drop(&mut self) {
        self.0.admitted.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Checks a request against the limits without touching the backend.
fn validate(cfg: &ServeConfig, sentence: &str, compute_matrix: bool, extra: &Option<Vec<usize>>) -> Result<(), ApiError> {
    let n = tokenization::segment_words(sentence).len();
    if n == 0 {
        return Err(ApiError::bad_request("sentence is empty"));
    }
    if n > cfg.max_words {
        return Err(ApiError::too_long(format!("sentence has {n} words; the limit is {}", cfg.max_words)));
    }
    if compute_matrix && n > cfg.matrix_max_words {
        return Err(ApiError::too_long(format!(
            "matrix requested for {n} words; the limit is {}",
            cfg.matrix_max_words
        )));
    }
    if let Some(bad) = extra.iter().flatten().find(|&&i| i >= n) {
        return Err(ApiError::bad_request(format!("extra_masks index {bad} out of range for {n} words")));
    }
    Ok(())
}

pub fn analyze_sentence(
    loaded: &Loaded,
    opts: &EngineOptions,
    sentence: &str,
    compute_matrix: bool,
    extra: &Option<Vec<usize>>,
) -> Result<AnalyzeResponse, ApiError> {
    let start = Instant::now();
    let ts = tokenization::align(sentence, loaded.tokenizer.as_ref()).map_err(|e| match e {
        TokenizeError::EmptyText => ApiError::bad_request("sentence is empty"),
        e => ApiError::bad_request(e.to_string()),
    })?;
    let masks: BTreeSet<usize> = extra.iter().flatten().copied().collect();
    let report = engine::analyze(&ts, loaded.backend.as_ref(), compute_matrix, &masks, opts)?;
    Ok(AnalyzeResponse {
        report,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

impl AppState {
    fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            batch_size: self.config.batch_size.max(1),
            parallel: true,
        }
    }

    /// Admits, waits for a worker permit and runs `f` on the blocking pool.
    async fn run<T, F>(self: &Arc<Self>, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Loaded, &EngineOptions) -> Result<T, ApiError> + Send + 'static,
    {
        let loaded = self.loaded()?;
        let _admission = self.admit()?;
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting down"))?;
        let opts = self.engine_options();
        tokio::task::spawn_blocking(move || f(&loaded, &opts))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("analysis task failed: {e}")))?
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &*state.phase.read().unwrap() {
        Phase::Ready(l) => Json(json!({"status": "ok", "model_id": l.backend.info().model_id})).into_response(),
        Phase::Loading => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "loading", "model_id": null})),
        )
            .into_response(),
        Phase::Failed(e) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "failed", "model_id": null, "message": e})),
        )
            .into_response(),
    }
}

async fn info(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let c = &state.config;
    Json(json!({
        "limits": {
            "max_words": c.max_words,
            "matrix_max_words": c.matrix_max_words,
            "body_limit_bytes": c.body_limit_bytes,
        },
        // same scale as the SVG report: grey level = round(255 * (1 - v / vmax))
        "scale": {"zero": "#ffffff", "one": "#000000", "vmax": 1.0, "absent": "hatched"},
    }))
}

async fn analyze(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AnalyzeRequest>, JsonRejection>,
) -> Result<Json<AnalyzeResponse>, ApiError> {
    let Json(req) = body?;
    validate(&state.config, &req.sentence, req.compute_matrix, &req.extra_masks)?;
    let words = tokenization::segment_words(&req.sentence).len();
    let resp = state
        .run(move |l, o| analyze_sentence(l, o, &req.sentence, req.compute_matrix, &req.extra_masks))
        .await?;
    log::info!(
        "analyze words={} matrix={} ms={:.1}",
        words,
        resp.report.matrix.is_some(),
        resp.timing_ms
    );
    Ok(Json(resp))
}

async fn compare(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompareRequest>, JsonRejection>,
) -> Result<Json<CompareResponse>, ApiError> {
    let Json(req) = body?;
    validate(&state.config, &req.sentence_a, req.compute_matrix, &req.extra_masks_a)?;
    validate(&state.config, &req.sentence_b, req.compute_matrix, &req.extra_masks_b)?;
    let resp = state
        .run(move |l, o| {
            Ok(CompareResponse {
                a: analyze_sentence(l, o, &req.sentence_a, req.compute_matrix, &req.extra_masks_a)?,
                b: analyze_sentence(l, o, &req.sentence_b, req.compute_matrix, &req.extra_masks_b)?,
            })
        })
        .await?;
    log::info!("compare ms={:.1}", resp.a.timing_ms + resp.b.timing_ms);
    Ok(Json(resp))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

fn cors(cfg: &ServeConfig) -> CorsLayer {
    let origins = if cfg.cors_origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(cfg.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/info", get(info))
        .route("/analyze", post(analyze))
        .route("/compare", post(compare))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(state.config.body_limit_bytes))
        .layer(cors(&state.config))
        .with_state(state)
}

/// Binds, loads the backend in the background and serves until Ctrl-C.
pub async fn serve(config: ServeConfig) -> Result<(), CliError> {
    let spec = config
        .backend
        .clone()
        .ok_or_else(|| CliError::Usage("serve needs a backend (--backend, config file or CXAFF_BACKEND)".into()))?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| CliError::Runtime(format!("address {}:{}: {e}", config.host, config.port)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
    let state = AppState::new(config);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || {
        log::info!("loading backend {spec}");
        match spec.load() {
            Ok(l) => {
                log::info!("backend ready: {}", l.backend.info().model_id);
                loader.set_phase(Phase::Ready(l));
            }
            Err(e) => {
                log::error!("backend failed to load: {e}");
                loader.set_phase(Phase::Failed(e.to_string()));
            }
        }
    });
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
}
