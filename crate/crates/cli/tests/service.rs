// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP contract tests driven through the router with `oneshot`.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use cxaff_cli::backend::{BackendSpec, Loaded};
use cxaff_cli::service::{router, AnalyzeResponse, AppState, CompareResponse, Phase, ServeConfig};
use cxaffinity::backend::{BackendInfo, MaskedLm, MaskedQuery};
use cxaffinity::prob::VocabDistribution;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const GREEN_DAY: &str = "My favorite band is Green Day";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn greenday() -> Loaded {
    BackendSpec::Mock(fixture("greenday.json")).load().unwrap()
}

fn ready(cfg: ServeConfig, loaded: Loaded) -> (Arc<AppState>, Router) {
    let state = AppState::new(cfg);
    state.set_phase(Phase::Ready(loaded));
    (state.clone(), router(state))
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).body(Body::empty()).unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn analyze(sentence: &str, matrix: bool, masks: Option<Vec<usize>>) -> Request<Body> {
    post(
        "/analyze",
        json!({"sentence": sentence, "compute_matrix": matrix, "extra_masks": masks}).to_string(),
    )
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

#[tokio::test]
async fn health_follows_the_load_lifecycle() {
    let state = AppState::new(ServeConfig::default());
    let app = router(state.clone());
    let (s, v) = call(&app, get("/health")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["status"], "loading");
    let (s, v) = call(&app, analyze(GREEN_DAY, false, None)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&v), "unavailable");

    state.set_phase(Phase::Failed("no weights".into()));
    let (s, v) = call(&app, get("/health")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["status"], "failed");

    state.set_phase(Phase::Ready(greenday()));
    let (s, v) = call(&app, get("/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "model_id": "mock-greenday"}));
}

#[tokio::test]
async fn matrix_links_band_with_green_day() {
    let (_, app) = ready(ServeConfig::default(), greenday());
    let (s, v) = call(&app, analyze(GREEN_DAY, true, None)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: AnalyzeResponse = serde_json::from_value(v).unwrap();
    assert_eq!(r.report.words, ["My", "favorite", "band", "is", "Green", "Day"]);
    assert_eq!(r.report.model_id, "mock-greenday");
    assert!(r.timing_ms >= 0.0);
    let m = r.report.matrix.unwrap();
    for (i, row) in m.iter().enumerate() {
        assert_eq!(row[i], 0.0);
    }
    let strong = [(2, 4), (2, 5), (4, 5), (5, 4)];
    let weakest_strong = strong.iter().map(|&(i, j)| m[i][j]).fold(f64::INFINITY, f64::min);
    for i in 0..6 {
        for j in 0..6 {
            if i != j && !strong.contains(&(i, j)) && !(j == 2 && i >= 4) {
                assert!(m[i][j] < weakest_strong, "cell ({i}, {j}) = {}", m[i][j]);
            }
        }
    }
}

#[tokio::test]
async fn masking_the_trigger_lowers_global_affinity() {
    let (_, app) = ready(ServeConfig::default(), greenday());
    let (_, with) = call(&app, analyze(GREEN_DAY, false, None)).await;
    let (s, without) = call(&app, analyze(GREEN_DAY, false, Some(vec![2]))).await;
    assert_eq!(s, StatusCode::OK);
    let g = |v: &Value, i: usize| v["global"][i].as_f64();
    assert_eq!(g(&with, 4), Some(0.9));
    assert_eq!(g(&with, 5), Some(0.9));
    assert_eq!(g(&without, 4), Some(0.1));
    assert_eq!(g(&without, 5), Some(0.15));
    assert_eq!(without["global"][2], Value::Null);
    assert_eq!(without["flags"]["masked"], json!([2]));
}

#[tokio::test]
async fn identical_requests_give_identical_responses() {
    let (_, app) = ready(ServeConfig::default(), greenday());
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing_ms");
        v
    };
    let (_, a) = call(&app, analyze(GREEN_DAY, true, Some(vec![0]))).await;
    let (_, b) = call(&app, analyze(GREEN_DAY, true, Some(vec![0]))).await;
    assert_eq!(strip(a), strip(b));
}

#[tokio::test]
async fn compare_returns_both_sides() {
    let (_, app) = ready(ServeConfig::default(), greenday());
    let body = json!({"sentence_a": GREEN_DAY, "sentence_b": "My favorite is Green Day", "compute_matrix": true});
    let (s, v) = call(&app, post("/compare", body.to_string())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: CompareResponse = serde_json::from_value(v).unwrap();
    assert_eq!(r.a.report.words.len(), 6);
    assert_eq!(r.b.report.words.len(), 5);
    assert!(r.a.report.matrix.is_some() && r.b.report.matrix.is_some());

    let bad = json!({"sentence_a": GREEN_DAY, "sentence_b": ""});
    let (s, v) = call(&app, post("/compare", bad.to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "bad_request");
}

#[tokio::test]
async fn malformed_and_oversized_requests() {
    let cfg = ServeConfig {
        max_words: 8,
        matrix_max_words: 4,
        body_limit_bytes: 512,
        ..Default::default()
    };
    let (_, app) = ready(cfg, greenday());

    let (s, v) = call(&app, post("/analyze", "{not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["status"], 400);
    assert!(v["error"]["message"].as_str().unwrap().len() > 0);

    let (s, _) = call(&app, post("/analyze", json!({"compute_matrix": true}).to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = call(&app, analyze("   ", false, None)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&app, analyze("a b c d e f g h i", false, None)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_code(&v), "too_long");

    let (s, _) = call(&app, analyze(GREEN_DAY, true, None)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    let (s, _) = call(&app, analyze(GREEN_DAY, false, None)).await;
    assert_eq!(s, StatusCode::OK);

    let (s, _) = call(&app, analyze(GREEN_DAY, false, Some(vec![6]))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let big = json!({"sentence": "x ".repeat(400)}).to_string();
    let (s, v) = call(&app, post("/analyze", big)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_code(&v), "too_long");

    let (s, v) = call(&app, get("/nowhere")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&v), "not_found");
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let cfg = ServeConfig {
        cors_origins: vec!["http://localhost:5173".into()],
        ..Default::default()
    };
    let (_, app) = ready(cfg, greenday());
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/analyze")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    let (s, v) = call(&app, get("/info")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["limits"]["matrix_max_words"], 40);
}

/// Blocks every prediction until released.
struct Gated {
    inner: Arc<dyn MaskedLm>,
    entered: AtomicBool,
    open: Mutex<bool>,
    cv: Condvar,
}

impl Gated {
    fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl MaskedLm for Gated {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }

    fn predict(&self, q: &MaskedQuery) -> cxaffinity::backend::Result<Vec<VocabDistribution>> {
        self.entered.store(true, Ordering::SeqCst);
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        self.inner.predict(q)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn busy_service_sheds_load_but_stays_healthy() {
    let base = greenday();
    let gated = Arc::new(Gated {
        inner: base.backend.clone(),
        entered: AtomicBool::new(false),
        open: Mutex::new(false),
        cv: Condvar::new(),
    });
    let loaded = Loaded {
        tokenizer: base.tokenizer,
        backend: gated.clone(),
    };
    let cfg = ServeConfig {
        workers: 1,
        queue: 0,
        ..Default::default()
    };
    let (_, app) = ready(cfg, loaded);

    let first = tokio::spawn({
        let app = app.clone();
        async move { call(&app, analyze(GREEN_DAY, true, None)).await }
    });
    let waited = tokio::time::timeout(Duration::from_secs(10), async {
        while !gated.entered.load(Ordering::SeqCst) {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    })
    .await;
    assert!(waited.is_ok(), "analysis never started");

    let (s, v) = call(&app, analyze(GREEN_DAY, false, None)).await;
    assert_eq!(s, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(error_code(&v), "busy");

    let health = tokio::time::timeout(Duration::from_secs(2), call(&app, get("/health"))).await;
    assert_eq!(health.expect("health blocked behind analysis").0, StatusCode::OK);

    gated.release();
    let (s, _) = first.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, analyze(GREEN_DAY, false, None)).await;
    assert_eq!(s, StatusCode::OK);
}
