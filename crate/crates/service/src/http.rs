//! JSON-over-HTTP front end for [`Engine`].

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use whittle_core::ImageId;

use crate::engine::{CreateSession, DatasetInfo, Engine, FeedbackOutcome, SessionCreated};
use crate::error::{Result, ServiceError};
use crate::session::{FeedbackRequest, PageItem};

pub const DATA_DIR_ENV: &str = "WHITTLE_DATA_DIR";

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Root that relative asset paths resolve against.
    pub asset_root: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self {
            engine,
            asset_root: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/datasets", get(datasets))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/results", get(results))
        .route("/v1/images/{dataset}/{id}", get(image))
        .with_state(state)
}

/// Runs blocking engine work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct DatasetList {
    datasets: Vec<DatasetInfo>,
}

async fn datasets(State(st): State<AppState>) -> Json<DatasetList> {
    Json(DatasetList {
        datasets: st.engine.datasets(),
    })
}

async fn create_session(
    State(st): State<AppState>,
    body: std::result::Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SessionCreated>> {
    let Json(req) = body.map_err(|e| ServiceError::bad(e.body_text()))?;
    let engine = st.engine.clone();
    blocking(move || engine.create_session(req)).await.map(Json)
}

async fn feedback(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<FeedbackRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<FeedbackOutcome>> {
    let Json(req) = body.map_err(|e| ServiceError::bad(e.body_text()))?;
    let engine = st.engine.clone();
    blocking(move || engine.submit_feedback(&id, &req)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Serialize)]
struct Items {
    items: Vec<PageItem>,
    page: usize,
    page_size: usize,
    total: usize,
}

async fn results(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: std::result::Result<Query<PageQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Items>> {
    let Query(q) = query.map_err(|e| ServiceError::bad(e.body_text()))?;
    let engine = st.engine.clone();
    let page = blocking(move || engine.results_with_defaults(&id, q.page, q.page_size)).await?;
    Ok(Json(Items {
        items: page.items,
        page: page.page,
        page_size: page.page_size,
        total: page.total,
    }))
}

/// Resolves `asset` under `root`, refusing anything that climbs out of it.
pub fn resolve_asset(root: Option<&Path>, asset: &str) -> Result<PathBuf> {
    let rel = Path::new(asset);
    if rel
        .components()
        .any(|c| matches!(c, Component::ParentDir | Component::Prefix(_)))
    {
        return Err(ServiceError::Asset(format!("refusing asset path {asset:?}")));
    }
    match root {
        Some(root) => Ok(root.join(rel.strip_prefix("/").unwrap_or(rel))),
        None if rel.is_absolute() => Ok(rel.to_path_buf()),
        None => Err(ServiceError::Asset(format!(
            "relative asset {asset:?} needs {DATA_DIR_ENV}"
        ))),
    }
}

async fn image(
    State(st): State<AppState>,
    UrlPath((dataset, id)): UrlPath<(String, ImageId)>,
) -> Result<Response> {
    let asset = st.engine.asset_path(&dataset, id)?;
    let path = resolve_asset(st.asset_root.as_deref(), &asset)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ServiceError::NoAsset(id),
        _ => ServiceError::Asset(format!("{}: {e}", path.display())),
    })?;
    let mime = mime_guess::from_path(&path).first_or_octet_stream();
    Ok(([(header::CONTENT_TYPE, mime.essence_str().to_string())], Body::from(bytes)).into_response())
}
