//! HTTP JSON API.
//!
//! | method | path                      | body / query                          |
//! |--------|---------------------------|---------------------------------------|
//! | POST   | `/sessions`               | `{lat, lon}`                          |
//! | POST   | `/sessions/{id}/query`    | `{text, k?, radius_km?}`              |
//! | POST   | `/sessions/{id}/feedback` | `{action, category?, station_id?}`    |
//! | GET    | `/sessions/{id}`          |                                       |
//! | GET    | `/stations`               | `?lat=&lon=&radius_km=`               |
//!
//! Errors are `{code, message, retriable}`; 503 responses carry `Retry-After`
//! when the upstream gave one.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use recombot_core::{FeedbackError, GeoPoint, RankedRecommendation, WeightVector};
use serde::{Deserialize, Serialize};

use crate::fixture::MalformedRecord;
use crate::gateway::GatewayError;
use crate::pipeline::{Pipeline, PipelineError};
use crate::session::{FeedbackRequest, SessionStore};

pub struct AppState {
    pub pipeline: Pipeline,
    pub store: SessionStore,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/stations", get(stations))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    #[serde(skip)]
    retry_after: Option<u64>,
    pub code: &'static str,
    pub message: String,
    pub retriable: bool,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            retry_after: None,
            code,
            message: message.into(),
            retriable: false,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(&self)).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match &e {
            GatewayError::InvalidRadius(_) => ApiError::bad_request(e.to_string()),
            GatewayError::Fixture(_) => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "source_unavailable",
                e.to_string(),
            ),
            GatewayError::SourceUnavailable { retry_after, .. } => ApiError {
                retry_after: Some(retry_after.map_or(1, |d| d.as_secs().max(1))),
                retriable: true,
                ..ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "source_unavailable",
                    e.to_string(),
                )
            },
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::SessionNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "session_not_found", message)
            }
            PipelineError::InvalidRequest(_) => ApiError::bad_request(message),
            PipelineError::Feedback(FeedbackError::UnknownAction(_)) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_action", message)
            }
            PipelineError::Feedback(FeedbackError::UnknownStation(_)) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_station", message)
            }
            PipelineError::Feedback(_) => ApiError::bad_request(message),
            PipelineError::Gateway(g) => g.into(),
            PipelineError::NoFeasibleStation(_) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "no_feasible_station",
                message,
            ),
            PipelineError::NoSource => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "source_unavailable",
                message,
            ),
            PipelineError::Store(_) | PipelineError::ReplayMismatch { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn origin(lat: f64, lon: f64) -> Result<GeoPoint, ApiError> {
    GeoPoint::new(lat, lon).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(body) = body?;
    let origin = origin(body.lat, body.lon)?;
    let session = blocking(move || {
        state
            .store
            .create(origin)
            .map_err(|e| PipelineError::from(e).into())
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: session.id,
        }),
    ))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let session = state
        .store
        .snapshot(&id)
        .ok_or_else(|| ApiError::from(PipelineError::SessionNotFound(id)))?;
    Ok(Json(session).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBody {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub radius_km: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct QueryResponse {
    pub recommendations: Vec<RankedRecommendation>,
    pub effective_weights: WeightVector,
    pub degraded: bool,
    pub notes: Vec<String>,
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> ApiResult<QueryResponse> {
    let Json(body) = body?;
    let outcome = blocking(move || {
        state
            .pipeline
            .handle_query(&state.store, &id, &body.text, body.k, body.radius_km)
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(QueryResponse {
        recommendations: outcome.recommendations,
        effective_weights: outcome.effective_weights,
        degraded: outcome.degraded,
        notes: outcome.notes,
    }))
}

#[derive(Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub weights: WeightVector,
    pub reset: bool,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<FeedbackResponse> {
    let Json(body) = body?;
    let outcome = blocking(move || {
        state
            .pipeline
            .handle_feedback(&state.store, &id, body)
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(FeedbackResponse {
        weights: outcome.weights,
        reset: outcome.reset,
    }))
}

#[derive(Deserialize)]
pub struct StationsParams {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub radius_km: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct StationsResponse {
    pub stations: Vec<recombot_core::Station>,
    pub malformed: Vec<MalformedRecord>,
    pub stale: bool,
}

async fn stations(
    State(state): State<Arc<AppState>>,
    params: Result<QueryParams<StationsParams>, QueryRejection>,
) -> ApiResult<StationsResponse> {
    let QueryParams(params) = params?;
    let origin = origin(params.lat, params.lon)?;
    let radius = params
        .radius_km
        .unwrap_or(state.pipeline.settings().radius_km);
    let resp = blocking(move || {
        let (retrieval, notes) = state
            .pipeline
            .candidates(origin, radius)
            .map_err(ApiError::from)?;
        Ok(StationsResponse {
            stations: retrieval.stations,
            malformed: retrieval.malformed,
            stale: notes.iter().any(|n| n.starts_with("station source")),
        })
    })
    .await?;
    Ok(Json(resp))
}
