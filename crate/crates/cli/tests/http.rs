use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use strategist_cli::server::router;
use strategist_core::corpus::synth::SynthSpec;
use strategist_core::engine::load_data;
use strategist_core::service::Service;
use strategist_core::{Engine, EngineConfig, Source};
use tower::ServiceExt;

fn app(token: Option<&str>) -> (Router, Arc<Service>) {
    let cfg = EngineConfig::synthetic(5, SynthSpec::new(5, 6, &["hotel", "restaurant"]));
    let (_, db) = load_data(&cfg).unwrap();
    let svc = Arc::new(Service::new(Arc::new(Engine::new(cfg, db).unwrap())));
    (router(svc.clone(), token.map(str::to_string)), svc)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), 1 << 24).await.unwrap();
    // extractor rejections are plain text
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

#[tokio::test]
async fn chat_session_round_trip() {
    let (app, svc) = app(None);
    let (st, bank) = call(&app, Method::GET, "/bank", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(bank, json!([]), "fresh bank is empty");

    let (st, info) = call(&app, Method::POST, "/sessions", Some(json!({"domains": ["hotel"]}))).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = info["session_id"].as_str().unwrap().to_string();
    assert_eq!(info["status"], "open");

    for u in ["i am looking for a hotel . the area should be north", "give me the phone of the hotel", "that is all"] {
        let (st, turn) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(json!({"utterance": u}))).await;
        assert_eq!(st, StatusCode::OK, "{turn}");
        assert_eq!(turn["kind"], "turn");
        assert!(!turn["system_response"].as_str().unwrap().is_empty());
        assert_eq!(turn["strategies"].as_object().unwrap().len(), 3);
    }
    let (st, end) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(json!({"utterance": "/end"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(end["kind"], "ended");
    assert_eq!(end["turns"], 3);
    assert!(end["outcome"].is_string());
    svc.engine().with_memory(|m| {
        assert_eq!(m.len(), 1);
        assert_eq!(m.iter().next().unwrap().source, Source::LiveChat);
    });

    let (st, _) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(json!({"utterance": "hi"}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "ended session");
    let (st, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (st, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, Method::POST, "/sessions/zzz/turns", Some(json!({"utterance": "hi"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bank_fitness_matches_engine_and_filters_apply() {
    let (app, svc) = app(None);
    call(&app, Method::POST, "/sessions", Some(json!({"domains": ["restaurant"]}))).await;
    let (_, rows) = call(&app, Method::GET, "/bank", None).await;
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 30);
    let params = svc.engine().config().fitness;
    svc.engine().with_bank(|b| {
        for r in rows {
            let id = strategist_core::StrategyId::new(r["id"].as_str().unwrap());
            assert_eq!(r["fitness"].as_f64().unwrap(), b.fitness(&id, &params).unwrap());
        }
    });
    let (_, dp) = call(&app, Method::GET, "/bank?agent_type=DP", None).await;
    let dp = dp.as_array().unwrap();
    assert_eq!(dp.len(), 10);
    assert!(dp.iter().all(|r| r["agent_type"] == "DP"));
    let (_, none) = call(&app, Method::GET, "/bank?domain=hotel", None).await;
    assert_eq!(none, json!([]));
    let (st, _) = call(&app, Method::GET, "/bank?agent_type=CEO", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn evolve_epochs_and_analytics() {
    let (app, _) = app(None);
    let (st, report) = call(&app, Method::POST, "/evolve", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(report["operations"], json!([]), "empty window is a no-op");
    let (_, epochs) = call(&app, Method::GET, "/epochs", None).await;
    assert_eq!(epochs.as_array().unwrap().len(), 1);
    let (st, a) = call(&app, Method::GET, "/analytics", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(a["epochs"], 1);
    assert!(a["bank"].is_null());
    call(&app, Method::POST, "/sessions", Some(json!({"domains": ["hotel"]}))).await;
    let (_, a) = call(&app, Method::GET, "/analytics", None).await;
    assert_eq!(a["alive"], 30);
    assert!(a["bank"]["entropy_bits"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let (app, _) = app(Some("s3cret"));
    let (st, _) = call(&app, Method::GET, "/bank", None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let req = Request::get("/bank")
        .header("authorization", "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
}
