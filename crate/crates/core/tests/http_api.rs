#![cfg(feature = "server")]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use emphasis_core::harness::final_assets_from_records;
use emphasis_core::market_data::SynthSpec;
use emphasis_core::session::http::{router, ErrorBody};
use emphasis_core::session::{DayView, OrderResult, SessionConfig, SessionDescriptor, SessionManager, SessionSummary};
use emphasis_core::sim::read_jsonl;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SERIES: &str = "seed=4,days=120,regime=momentum,initial_price=3000";

fn config(store: Option<&Path>) -> SessionConfig {
    let mut c: SessionConfig = serde_json::from_value(json!({
        "series": {"synth": SERIES},
        "window": {"start": 40},
        "predictor": {"calibrated": {"seed": 2, "target_accuracy": 0.6}},
        "master_seed": 1
    }))
    .unwrap();
    c.store_dir = store.map(Path::to_path_buf);
    c
}

fn app_with(cfg: &SessionConfig) -> Router {
    router(Arc::new(SessionManager::from_config(cfg, Path::new(".")).unwrap()))
}

fn app() -> Router {
    app_with(&config(None))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_call<T: serde::de::DeserializeOwned>(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, T) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn create(app: &Router, condition: &str, seed: u64) -> String {
    let (status, d): (_, SessionDescriptor) =
        json_call(app, "POST", "/sessions", Some(json!({"condition": condition, "seed": seed}))).await;
    assert_eq!(status, StatusCode::CREATED);
    d.session_id
}

async fn order(app: &Router, id: &str, day: usize, target: u32) -> (StatusCode, Vec<u8>) {
    call(
        app,
        "POST",
        &format!("/sessions/{id}/order"),
        Some(json!({"day": day, "target_position": target})),
    )
    .await
}

#[tokio::test]
async fn full_episode_over_http() {
    let app = app();
    let id = create(&app, "roulette", 3).await;
    for day in 0..45 {
        let (status, view): (_, DayView) = json_call(&app, "GET", &format!("/sessions/{id}/day"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(view.day, day);
        assert_eq!(view.explanations.len(), 3);
        let target = *view.valid_targets.iter().rev().nth(day % 3).unwrap_or(&0);
        let (status, body) = order(&app, &id, day, target).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        let r: OrderResult = serde_json::from_slice(&body).unwrap();
        assert_eq!(r.next_day, day + 1);
    }
    let (status, summary): (_, SessionSummary) = json_call(&app, "GET", &format!("/sessions/{id}/summary"), None).await;
    assert_eq!(status, StatusCode::OK);
    let series = SERIES.parse::<SynthSpec>().unwrap().generate().unwrap();
    let recomputed = final_assets_from_records(&summary.records, &series).unwrap();
    assert!((summary.final_assets - recomputed).abs() < 1e-6);

    let (status, log) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(read_jsonl(log.as_slice()).unwrap(), summary.records);

    let (status, err): (_, ErrorBody) = json_call(&app, "GET", &format!("/sessions/{id}/day"), None).await;
    assert_eq!((status, err.code.as_str()), (StatusCode::CONFLICT, "conflict"));
    let (status, _) = order(&app, &id, 45, 0).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn day_payload_hides_advisor_decision() {
    let app = app();
    let id = create(&app, "argmax", 1).await;
    let (_, a) = call(&app, "GET", &format!("/sessions/{id}/day"), None).await;
    let (_, b) = call(&app, "GET", &format!("/sessions/{id}/day"), None).await;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains("d_ai"));
    let v: Value = serde_json::from_str(&text).unwrap();
    for key in ["day", "bars", "p", "explanations", "portfolio", "valid_targets"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[tokio::test]
async fn error_envelopes_and_status_codes() {
    let app = app();
    let (status, err): (_, ErrorBody) = json_call(&app, "GET", "/sessions/nope/day", None).await;
    assert_eq!((status, err.code.as_str()), (StatusCode::NOT_FOUND, "not_found"));

    let (status, err): (_, ErrorBody) =
        json_call(&app, "POST", "/sessions", Some(json!({"condition": "bogus"}))).await;
    assert_eq!((status, err.code.as_str()), (StatusCode::BAD_REQUEST, "invalid_request"));

    let (status, _): (_, ErrorBody) = json_call(&app, "POST", "/sessions", Some(json!({"condition": 5}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let id = create(&app, "flat", 2).await;
    let (status, _) = order(&app, &id, 0, 150).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = order(&app, &id, 0, 500).await;
    let err: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!((status, err.code.as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "order_rejected"));
    let (_, d): (_, SessionDescriptor) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(d.day, 0);

    let (status, _) = order(&app, &id, 0, 300).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err): (_, ErrorBody) = json_call(
        &app,
        "POST",
        &format!("/sessions/{id}/order"),
        Some(json!({"day": 0, "target_position": 300})),
    )
    .await;
    assert_eq!((status, err.code.as_str()), (StatusCode::CONFLICT, "conflict"));

    let (status, _): (_, ErrorBody) = json_call(&app, "GET", &format!("/sessions/{id}/summary"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_duplicate_submissions_record_one_order() {
    let app = app();
    let id = create(&app, "roulette", 9).await;
    let tasks: Vec<_> = (0..10)
        .map(|_| {
            let (app, id) = (app.clone(), id.clone());
            tokio::spawn(async move { order(&app, &id, 0, 200).await.0 })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 1);
}

#[tokio::test]
async fn restarted_service_resumes_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Some(dir.path()));
    let first = app_with(&cfg);
    let id = create(&first, "roulette", 4).await;
    for day in 0..5 {
        assert_eq!(order(&first, &id, day, 100).await.0, StatusCode::OK);
    }
    let (_, before) = call(&first, "GET", &format!("/sessions/{id}/day"), None).await;
    drop(first);
    let second = app_with(&cfg);
    let (status, after) = call(&second, "GET", &format!("/sessions/{id}/day"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn auto_condition_and_listing() {
    let app = app();
    let (_, list): (_, Value) = json_call(&app, "GET", "/conditions", None).await;
    assert_eq!(list["conditions"], json!(["argmax", "flat", "roulette"]));
    let (status, d): (_, SessionDescriptor) = json_call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(["argmax", "flat", "roulette"].contains(&d.condition.as_str()));
}
