//! JSON API over a [`Store`].
//!
//! Handlers are stateless apart from the store and a set of sessions with an
//! answer in flight; a second answer to a busy session gets 409 rather than
//! waiting its turn.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use convey_core::dsl::{parse_script_bytes, ParseError, ParseOptions};
use convey_core::engine::{
    start_session, submit_answer, transcript, ChatSession, EngineError, MessageRun, Selection,
    Timestamp,
};
use convey_core::flow::{deserialize, SurveyGraph};
use convey_core::stats::{descriptive_summary, Metric, Orientation, SurveyView};
use convey_core::store::{build_matrix, export_csv, ResponseRecord, Store, StoreError};

#[derive(Clone)]
pub struct AppState {
    store: Arc<dyn Store>,
    busy: Arc<Mutex<HashSet<String>>>,
}

impl AppState {
    pub fn new(store: Arc<dyn Store>) -> Self {
        AppState {
            store,
            busy: Arc::default(),
        }
    }

    pub fn store(&self) -> &dyn Store {
        &*self.store
    }

    fn claim(&self, session: &str) -> Option<Claim> {
        let mut busy = self.busy.lock().expect("busy set poisoned");
        busy.insert(session.to_owned()).then(|| Claim {
            busy: self.busy.clone(),
            session: session.to_owned(),
        })
    }
}

/// Marks a session busy until dropped.
struct Claim {
    busy: Arc<Mutex<HashSet<String>>>,
    session: String,
}

impl Drop for Claim {
    fn drop(&mut self) {
        if let Ok(mut busy) = self.busy.lock() {
            busy.remove(&self.session);
        }
    }
}

/// Error envelope for every non-2xx response.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn with_details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).ok();
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) | StoreError::UnknownSurvey(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "survey_not_found", msg)
            }
            StoreError::UnknownSession(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "session_not_found", msg)
            }
            StoreError::PublishedImmutable(_) => {
                ApiError::new(StatusCode::CONFLICT, "survey_published", msg)
            }
            StoreError::AlreadyPublished(_) => {
                ApiError::new(StatusCode::CONFLICT, "already_published", msg)
            }
            StoreError::InvalidGraph(v) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_graph", msg)
                    .with_details(v)
            }
            StoreError::Mismatch { .. } | StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                ApiError::internal(msg)
            }
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::UnpublishedSurvey(_) => {
                ApiError::new(StatusCode::CONFLICT, "survey_not_published", msg)
            }
            EngineError::SessionFinished => {
                ApiError::new(StatusCode::CONFLICT, "session_finished", msg)
            }
            EngineError::SessionNotFinished => {
                ApiError::new(StatusCode::CONFLICT, "session_not_finished", msg)
            }
            EngineError::InvalidSelection { .. } | EngineError::ShapeMismatch { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_selection", msg)
            }
            EngineError::InvalidGraph(v) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_graph", msg)
                    .with_details(v)
            }
            EngineError::SurveyMismatch { .. } => ApiError::internal(msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs store-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/surveys", post(create_survey))
        .route("/surveys/{id}", get(get_survey))
        .route("/surveys/{id}/publish", post(publish))
        .route("/surveys/{id}/sessions", post(create_session))
        .route("/surveys/{id}/stats", get(stats))
        .route("/surveys/{id}/export.csv", get(export))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(answer))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(cors())
        .with_state(state)
}

/// Allows any origin unless `CONVEY_CORS_ORIGIN` names one.
fn cors() -> CorsLayer {
    let origin = match std::env::var("CONVEY_CORS_ORIGIN")
        .ok()
        .and_then(|o| HeaderValue::from_str(&o).ok())
    {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any)
}

#[derive(Debug, Default, Deserialize)]
struct CreateQuery {
    id: Option<String>,
    title: Option<String>,
}

async fn create_survey(
    State(state): State<AppState>,
    Query(q): Query<CreateQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SurveyGraph>)> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("application/json"));
    let graph = if is_json {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        deserialize(text).map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_graph",
                e.to_string(),
            )
        })?
    } else {
        let mut opts = ParseOptions {
            id: q
                .id
                .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string()),
            ..ParseOptions::default()
        };
        if let Some(t) = q.title {
            opts.title = t;
        }
        parse_script_bytes(&body, &opts).map_err(parse_failure)?
    };
    let saved = graph.clone();
    blocking(&state, move |s| Ok(s.store.save_survey(&saved)?)).await?;
    Ok((StatusCode::CREATED, Json(graph)))
}

fn parse_failure(errors: Vec<ParseError>) -> ApiError {
    let message = match errors.as_slice() {
        [one] => one.to_string(),
        [first, ..] => format!("{first} (and {} more)", errors.len() - 1),
        [] => "script rejected".to_owned(),
    };
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "parse_error", message).with_details(errors)
}

async fn get_survey(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SurveyGraph>> {
    blocking(&state, move |s| Ok(Json(s.store.load_survey(&id)?))).await
}

async fn publish(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SurveyGraph>> {
    blocking(&state, move |s| Ok(Json(s.store.publish(&id)?))).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub run: MessageRun,
}

async fn create_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    blocking(&state, move |s| {
        let graph = s.store.load_survey(&id)?;
        let session_id = uuid::Uuid::new_v4().to_string();
        let (session, run) = start_session(&graph, &session_id, Timestamp::now())?;
        s.store.save_session(&session)?;
        Ok((
            StatusCode::CREATED,
            Json(SessionCreated { session_id, run }),
        ))
    })
    .await
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<ChatSession>> {
    blocking(&state, move |s| Ok(Json(s.store.load_session(&id)?))).await
}

async fn answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<MessageRun>> {
    let selection: Selection = serde_json::from_slice(&body).map_err(|e| {
        ApiError::bad_request(format!(
            "expected one of {{\"value\"}}, {{\"values\"}}, {{\"text\"}} or {{\"option\"}}: {e}"
        ))
    })?;
    let Some(claim) = state.claim(&id) else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_busy",
            "another answer for this session is in progress",
        ));
    };
    blocking(&state, move |s| {
        let _claim = claim;
        let mut session = s.store.load_session(&id)?;
        let graph = s.store.load_survey(&session.survey_id)?;
        let before = session.answers.len();
        let run = submit_answer(&mut session, &graph, &selection, Timestamp::now())?;
        let records: Vec<ResponseRecord> = session.answers[before..]
            .iter()
            .map(|a| ResponseRecord::from_event(&session, a))
            .collect();
        s.store.append_records(&records)?;
        s.store.save_session(&session)?;
        Ok(Json(run))
    })
    .await
}

async fn get_transcript(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |s| {
        let session = s.store.load_session(&id)?;
        let graph = s.store.load_survey(&session.survey_id)?;
        let t = transcript(&session, &graph);
        Ok(Json(json!({
            "session_id": session.id,
            "finished": session.is_finished(),
            "entries": t.entries,
            "text": t.to_string(),
        })))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct StatsQuery {
    metric: Option<String>,
    orientation: Option<String>,
    format: Option<String>,
}

async fn stats(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StatsQuery>,
) -> ApiResult<Response> {
    let metric: Metric = q
        .metric
        .as_deref()
        .map_or(Ok(Metric::default()), str::parse)
        .map_err(ApiError::bad_request)?;
    let orientation: Orientation = q
        .orientation
        .as_deref()
        .map_or(Ok(Orientation::default()), str::parse)
        .map_err(ApiError::bad_request)?;
    let text = match q.format.as_deref() {
        None | Some("json") => false,
        Some("text") => true,
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unknown format `{other}` (json, text)"
            )))
        }
    };
    let report = blocking(&state, move |s| {
        let view = SurveyView::from_store(s.store(), &id)?;
        let mut report = descriptive_summary(&view);
        let matrix = build_matrix(s.store(), &id, true)?;
        report.tests = crate::reliability_tests(&matrix, metric, orientation, None);
        Ok(report)
    })
    .await?;
    Ok(if text {
        (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            report.to_string(),
        )
            .into_response()
    } else {
        Json(report).into_response()
    })
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let csv = blocking(&state, move |s| Ok(export_csv(s.store(), &id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}
