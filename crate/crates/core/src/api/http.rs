//! HTTP routes.
//!
//! ```text
//! GET /api/overview
//! GET /api/search?q=&p_page=&p_size=&p_sort=&p_filter=&b_page=&b_size=&b_sort=&b_filter=
//! GET /api/projects/{id}
//! GET /api/projects/{id}/publications?page=&size=&sort=&filter=
//! ```

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Serialize;

use super::{ApiError, Catalog, RawTableParams, TableParams, PROJECT_COLUMNS, PUBLICATION_COLUMNS};

/// Shared server state. The catalog is swapped wholesale on reindex;
/// requests clone the `Arc` they start with and finish on it.
#[derive(Debug)]
pub struct AppState {
    catalog: RwLock<Arc<Catalog>>,
    token: Option<String>,
}

impl AppState {
    pub fn new(catalog: Catalog, token: Option<String>) -> Arc<Self> {
        Arc::new(AppState {
            catalog: RwLock::new(Arc::new(catalog)),
            token: token.filter(|t| !t.is_empty()),
        })
    }

    pub fn current(&self) -> Arc<Catalog> {
        Arc::clone(&self.catalog.read().expect("catalog lock poisoned"))
    }

    pub fn swap(&self, catalog: Catalog) {
        *self.catalog.write().expect("catalog lock poisoned") = Arc::new(catalog);
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(token) = &self.token else {
            return Ok(());
        };
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/overview", get(overview))
        .route("/api/search", get(search))
        .route("/api/projects/{id}", get(project))
        .route("/api/projects/{id}/publications", get(project_publications))
        .fallback(|| async { error_response(&ApiError::NotFound) })
        .with_state(state)
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        bytes,
    )
        .into_response()
}

fn error_response(err: &ApiError) -> Response {
    let status = StatusCode::from_u16(err.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    json_response(status, &err.body())
}

fn respond<T: Serialize>(result: Result<T, ApiError>) -> Response {
    match result {
        Ok(body) => json_response(StatusCode::OK, &body),
        Err(err) => error_response(&err),
    }
}

async fn overview(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    respond(state.authorize(&headers).map(|()| state.current().overview()))
}

async fn search(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    respond((|| {
        state.authorize(&headers)?;
        let q = query.get("q").map(String::as_str).unwrap_or("");
        let projects = TableParams::parse(RawTableParams::from_query(&query, "p_"), PROJECT_COLUMNS)?;
        let publications = TableParams::parse(RawTableParams::from_query(&query, "b_"), PUBLICATION_COLUMNS)?;
        state.current().search(q, &projects, &publications)
    })())
}

async fn project(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    respond(state.authorize(&headers).and_then(|()| state.current().project(&id)))
}

async fn project_publications(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    respond((|| {
        state.authorize(&headers)?;
        let params = TableParams::parse(RawTableParams::from_query(&query, ""), PUBLICATION_COLUMNS)?;
        state.current().project_publications(&id, &params)
    })())
}
