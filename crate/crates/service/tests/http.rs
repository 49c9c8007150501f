mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use whittle_service::http::{resolve_asset, router, AppState};

fn app() -> Router {
    router(AppState {
        engine: common::engine(),
        asset_root: None,
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn health_and_datasets() {
    let app = app();
    let (s, v) = json_call(&app, "GET", "/v1/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok"}));
    let (s, v) = json_call(&app, "GET", "/v1/datasets", None).await;
    assert_eq!(s, StatusCode::OK);
    let d = &v["datasets"][0];
    assert_eq!(d["name"], "shoes");
    assert_eq!(d["N"], 300);
    assert_eq!(d["M"], 6);
    assert_eq!(d["attribute_names"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn active_round_trip_matches_results() {
    let app = app();
    let (s, created) = json_call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({"dataset": "shoes", "mode": "ACTIVE", "seed": 3})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let id = created["session_id"].as_str().unwrap().to_string();
    let mut token = created["question"]["token"].as_str().unwrap().to_string();
    for (k, r) in ["more", "less", "more", "equal", "less"].iter().enumerate() {
        let (s, out) = json_call(
            &app,
            "POST",
            &format!("/v1/sessions/{id}/feedback"),
            Some(json!({"response": r, "confidence": 2, "question_token": token})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{out}");
        assert_eq!(out["iteration"], k + 1);
        assert!(out["entropy"].as_f64().unwrap() > 0.0);
        let (s, res) = json_call(&app, "GET", &format!("/v1/sessions/{id}/results?page=0&page_size=40"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(res["items"], out["page"]["items"]);
        let (s, again) = json_call(
            &app,
            "POST",
            &format!("/v1/sessions/{id}/feedback"),
            Some(json!({"response": r, "question_token": token})),
        )
        .await;
        assert_eq!(s, StatusCode::CONFLICT, "{again}");
        token = out["question"]["token"].as_str().unwrap().to_string();
    }
}

#[tokio::test]
async fn free_feedback_validates_references() {
    let app = app();
    let (_, created) = json_call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({"dataset": "shoes", "mode": "free", "seed": 4, "page_size": 10})),
    )
    .await;
    let id = created["session_id"].as_str().unwrap();
    let shown: Vec<u64> = created["page"]["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|it| it["id"].as_u64().unwrap())
        .collect();
    let unseen = (0..300).find(|i| !shown.contains(i)).unwrap();
    let uri = format!("/v1/sessions/{id}/feedback");
    let (s, err) = json_call(
        &app,
        "POST",
        &uri,
        Some(json!({"statements": [{"ref_id": unseen, "attribute": 0, "response": "more"}]})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("reference not shown"));
    let (s, out) = json_call(
        &app,
        "POST",
        &uri,
        Some(json!({"statements": [
            {"ref_id": shown[0], "attribute": "pointy at the front", "response": "more", "confidence": 3},
            {"ref_id": shown[1], "attribute": 1, "response": "equal"}
        ]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{out}");
    assert!(out["question"].is_null());
    let (s, _) = json_call(&app, "POST", &uri, Some(json!({"statements": "nope"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = json_call(&app, "POST", &uri, Some(json!({"surprise": 1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let app = app();
    let (s, _) = json_call(&app, "GET", "/v1/sessions/missing/results", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/v1/sessions", Some(json!({"dataset": "cats", "mode": "FREE"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/v1/sessions", Some(json!({"dataset": "shoes", "mode": "SIDEWAYS"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, created) = json_call(&app, "POST", "/v1/sessions", Some(json!({"dataset": "shoes", "mode": "FREE"}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (s, _) = json_call(&app, "GET", &format!("/v1/sessions/{id}/results?page=99"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, res) = json_call(&app, "GET", &format!("/v1/sessions/{id}/results?page=7&page_size=40"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(res["items"].as_array().unwrap().len(), 20);
    let (s, _) = json_call(&app, "GET", "/v1/images/shoes/5", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn images_are_served_from_the_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("img")).unwrap();
    std::fs::write(dir.path().join("img/7.png"), b"\x89PNG fake").unwrap();
    let mut index = common::index();
    index.asset_paths[7] = Some("img/7.png".into());
    index.asset_paths[8] = Some("../secret.png".into());
    let engine = whittle_service::Engine::new(Default::default()).with_dataset(index);
    let app = router(AppState {
        engine: std::sync::Arc::new(engine),
        asset_root: Some(dir.path().to_path_buf()),
    });
    let (s, bytes, ctype) = call(&app, "GET", "/v1/images/shoes/7", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bytes, b"\x89PNG fake");
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let (s, _, _) = call(&app, "GET", "/v1/images/shoes/8", None).await;
    assert!(!s.is_success());
    let (s, _, _) = call(&app, "GET", "/v1/images/shoes/100000", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(resolve_asset(None, "relative.png").is_err());
}
