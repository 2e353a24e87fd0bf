//! HTTP front end for the ad server.
//!
//! | route          | method | result                                   |
//! |----------------|--------|------------------------------------------|
//! | `/ad`          | GET    | 200 with the chosen ad, 204 on no-fill   |
//! | `/event`       | POST   | 202 once the event is appended           |
//! | `/healthz`     | GET    | 200                                      |
//! | `/reload`      | POST   | 200 after an atomic snapshot swap        |

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{record_event, serve, ServeMode, ServeOutcome, ServingPaths, ServingState, Snapshot};
use crate::catalog::{keyword_set, Location, Placement, RequestContext};
use crate::error::Error;
use crate::logs::EventLogWriter;

struct Inner {
    snapshot: Snapshot,
    paths: Option<ServingPaths>,
    events: Option<EventLogWriter>,
    default_mode: ServeMode,
}

/// Shared handler state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(state: ServingState, default_mode: ServeMode) -> Self {
        AppState(Arc::new(Inner {
            snapshot: Snapshot::new(state),
            paths: None,
            events: None,
            default_mode,
        }))
    }

    /// Loads the initial snapshot from `paths`; `/reload` rereads them.
    pub fn from_paths(paths: ServingPaths, default_mode: ServeMode) -> crate::Result<Self> {
        let state = paths.load()?;
        Ok(AppState(Arc::new(Inner {
            snapshot: Snapshot::new(state),
            paths: Some(paths),
            events: None,
            default_mode,
        })))
    }

    /// Enables `/event`. Must be called before the state is shared.
    pub fn with_event_log(self, log: EventLogWriter) -> Self {
        let inner = Arc::try_unwrap(self.0).unwrap_or_else(|_| panic!("state already shared"));
        AppState(Arc::new(Inner {
            events: Some(log),
            ..inner
        }))
    }

    pub fn snapshot(&self) -> Arc<ServingState> {
        self.0.snapshot.load()
    }
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Encoding { .. }
            | Error::Mapping { .. }
            | Error::UnknownKeyword(_)
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Debug, Deserialize)]
struct AdQuery {
    placement: String,
    size: String,
    category: String,
    #[serde(default)]
    keywords: String,
    #[serde(default)]
    country: String,
    #[serde(default)]
    city: String,
    #[serde(default)]
    area: String,
    mode: Option<String>,
}

/// Keywords either as a JSON array or a comma-separated string.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KeywordList {
    List(Vec<String>),
    Joined(String),
}

impl Default for KeywordList {
    fn default() -> Self {
        KeywordList::List(Vec::new())
    }
}

impl KeywordList {
    fn into_vec(self) -> Vec<String> {
        match self {
            KeywordList::List(v) => v,
            KeywordList::Joined(s) => split_keywords(&s),
        }
    }
}

#[derive(Debug, Deserialize)]
struct EventBody {
    ad_id: String,
    clicked: bool,
    placement: Placement,
    size: String,
    category: String,
    #[serde(default)]
    keywords: KeywordList,
    #[serde(default)]
    location: Location,
    #[serde(default)]
    ip: String,
    #[serde(default)]
    browser: String,
    #[serde(default)]
    cookies: String,
}

fn split_keywords(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(str::to_string)
        .collect()
}

async fn get_ad(State(app): State<AppState>, Query(q): Query<AdQuery>) -> Result<Response, ApiError> {
    let placement: Placement = q.placement.parse()?;
    let mode = match q.mode.as_deref() {
        Some(m) => m.parse()?,
        None => app.0.default_mode,
    };
    let state = app.snapshot();
    if !state.model().schema.size_registry.contains(&q.size) {
        return Err(Error::Encoding {
            what: "size",
            label: q.size,
        }
        .into());
    }
    let mut request = RequestContext::new(placement, q.size, q.category, split_keywords(&q.keywords));
    request.location = Location {
        area: q.area,
        city: q.city,
        country: q.country,
    };
    match serve(&request, mode, &state)? {
        ServeOutcome::Filled(ad) => Ok((StatusCode::OK, Json(ad)).into_response()),
        ServeOutcome::NoFill { .. } => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn post_event(State(app): State<AppState>, Json(body): Json<EventBody>) -> Result<Response, ApiError> {
    let Some(log) = app.0.events.as_ref() else {
        let body = json!({ "error": "unavailable", "message": "event logging is not enabled" });
        return Ok((StatusCode::SERVICE_UNAVAILABLE, Json(body)).into_response());
    };
    let request = RequestContext {
        placement: body.placement,
        size: body.size,
        category: body.category,
        page_keywords: keyword_set(body.keywords.into_vec()),
        location: body.location,
        ip: body.ip,
        browser: body.browser,
        cookies: body.cookies,
    };
    let state = app.snapshot();
    let event = record_event(&state, log, &body.ad_id, &request, body.clicked)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "timestamp": event.timestamp }))).into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

async fn reload(State(app): State<AppState>) -> Result<Response, ApiError> {
    let Some(paths) = app.0.paths.as_ref() else {
        let body = json!({ "error": "conflict", "message": "server was not started from files" });
        return Ok((StatusCode::CONFLICT, Json(body)).into_response());
    };
    let state = paths.load()?;
    let ads = state.catalog().len();
    app.0.snapshot.replace(state);
    log::info!("reloaded serving snapshot with {ads} ads");
    Ok(Json(json!({ "reloaded": true, "ads": ads })).into_response())
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/ad", get(get_ad))
        .route("/event", post(post_event))
        .route("/healthz", get(healthz))
        .route("/reload", post(reload))
        .with_state(app)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn run<F>(listener: tokio::net::TcpListener, app: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
