use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use gridfield_core::api::{
    Health, QueryRequest, QueryResponse, QuerySource, RegisterQuery, ReloadRequest, SceneInfo,
};
use gridfield_core::query::{QueryInput, ViewSpec};
use serde::Deserialize;

use crate::{ApiError, AppState, Loaded};

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scene", get(scene))
        .route("/render", get(render))
        .route("/query", post(query))
        .route("/queries", get(list_queries))
        .route("/queries/{name}", put(register_query))
        .route("/reload", post(reload))
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn loaded(state: &AppState) -> ApiResult<Arc<Loaded>> {
    state.loaded().ok_or_else(ApiError::not_loaded)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> gridfield_core::Result<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        loaded: state.loaded().is_some(),
    })
}

async fn scene(State(state): State<Shared>) -> ApiResult<Json<SceneInfo>> {
    let l = loaded(&state)?;
    Ok(Json(SceneInfo::new(l.engine.field(), state.query_names())))
}

#[derive(Deserialize)]
struct RenderParams {
    view: usize,
}

async fn render(
    State(state): State<Shared>,
    params: Result<Query<RenderParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let l = loaded(&state)?;
    let png = blocking(move || l.engine.feature_map(p.view)?.0.to_png()).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn query(
    State(state): State<Shared>,
    payload: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<Json<QueryResponse>> {
    let req = body(payload)?;
    let l = loaded(&state)?;
    let embedding = match &req.source {
        QuerySource::Embedding { embedding } => embedding.clone(),
        QuerySource::Name { name } => state
            .registered(name)
            .ok_or_else(|| ApiError::not_found(format!("no registered query named {name:?}")))?,
        QuerySource::Text { text } => {
            let enc = state.encoder().ok_or_else(|| {
                ApiError::new(StatusCode::BAD_GATEWAY, "no text encoder configured")
            })?;
            enc.encode(text).await?
        }
    };
    let input = QueryInput {
        embedding,
        view: ViewSpec::Id(req.view),
        config: req.config(),
    };
    let result = blocking(move || l.engine.query(&input)).await?;
    Ok(Json(QueryResponse::from_result(&result)))
}

async fn list_queries(State(state): State<Shared>) -> Json<Vec<String>> {
    Json(state.query_names())
}

async fn register_query(
    State(state): State<Shared>,
    Path(name): Path<String>,
    payload: Result<Json<RegisterQuery>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let q = body(payload)?;
    if q.embedding.is_empty() || q.embedding.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::bad_request("embedding must be non-empty and finite"));
    }
    if let Some(l) = state.loaded() {
        let dim = l.engine.field().mapping.embedding_dim;
        if q.embedding.len() != dim {
            return Err(ApiError::bad_request(format!(
                "embedding has {} values, field expects {dim}",
                q.embedding.len()
            )));
        }
    }
    state.register(&name, q.embedding);
    Ok(StatusCode::NO_CONTENT)
}

async fn reload(
    State(state): State<Shared>,
    payload: Result<Json<ReloadRequest>, JsonRejection>,
) -> ApiResult<Json<SceneInfo>> {
    let req = body(payload)?;
    let current = state.loaded();
    let pick = |given: Option<String>, old: Option<PathBuf>, what: &str| {
        given
            .map(PathBuf::from)
            .or(old)
            .ok_or_else(|| ApiError::bad_request(format!("no {what} path given and none loaded")))
    };
    let field = pick(req.field, current.as_ref().map(|l| l.field_path.clone()), "field")?;
    let mapping = pick(req.mapping, current.as_ref().map(|l| l.mapping_path.clone()), "mapping")?;
    let next = blocking(move || Loaded::open(&field, &mapping)).await?;
    let next = state.swap(next);
    tracing::info!(field = %next.field_path.display(), "reloaded");
    Ok(Json(SceneInfo::new(next.engine.field(), state.query_names())))
}
