//! HTTP front end: one endpoint per lifecycle command, read endpoints for
//! collaborations, summaries and policies, and a server-sent event stream.

pub mod config;
pub mod error;

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request as HttpRequest, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::Stream;
use gdm_core::bus::{NotificationBus, Observer};
use gdm_core::domain::Collaboration;
use gdm_core::engine::Engine;
use gdm_core::events::Event;
use gdm_core::lifecycle::LifecycleState;
use gdm_core::request::Request;
use gdm_core::{CollaborationId, GdmError, UserId};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokio::sync::mpsc;

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const LAST_EVENT_ID_HEADER: &str = "last-event-id";

enum Idem {
    InFlight,
    Done(StatusCode, Bytes),
}

pub struct AppState {
    engine: Arc<Engine>,
    tokens: HashMap<String, UserId>,
    idempotency: Mutex<HashMap<(UserId, String), Idem>>,
    next_stream: AtomicU64,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, tokens: impl IntoIterator<Item = (String, UserId)>) -> Arc<Self> {
        Arc::new(AppState {
            engine,
            tokens: tokens.into_iter().collect(),
            idempotency: Mutex::new(HashMap::new()),
            next_stream: AtomicU64::new(1),
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

type Shared = Arc<AppState>;

/// The authenticated caller.
pub struct Actor(pub UserId);

impl FromRequestParts<Shared> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        // Browsers cannot set headers on an EventSource, so a query token is accepted too.
        let query = parts.uri.query().and_then(|q| {
            q.split('&')
                .find_map(|kv| kv.strip_prefix("access_token="))
        });
        header
            .or(query)
            .and_then(|t| state.tokens.get(t))
            .map(|u| Actor(u.clone()))
            .ok_or_else(ApiError::unauthorized)
    }
}

/// JSON body where an empty body reads as `{}` and errors use [`ApiError`].
pub struct JsonBody<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: HttpRequest, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let slice: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        serde_json::from_slice(slice)
            .map(JsonBody)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Mutation {
    collaboration_id: CollaborationId,
    #[serde(skip_serializing_if = "Option::is_none")]
    created: Option<String>,
    state: LifecycleState,
    round: u32,
    events: Vec<Event>,
    collaboration: Collaboration,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/collaborations", post(create_collaboration).get(list_collaborations))
        .route("/collaborations/{id}", get(get_collaboration))
        .route("/collaborations/{id}/summary", get(get_summary))
        .route("/collaborations/{id}/events", get(stream_events))
        .route("/collaborations/{id}/situation", post(define_situation))
        .route("/collaborations/{id}/policy", post(choose_method))
        .route("/collaborations/{id}/notify", post(notify_actors))
        .route("/collaborations/{id}/members", post(add_member))
        .route("/collaborations/{id}/members/{user}", delete(remove_member))
        .route("/collaborations/{id}/proposals", post(add_proposal))
        .route("/collaborations/{id}/rounds/open", post(open_round))
        .route("/collaborations/{id}/rounds/close", post(close_round))
        .route("/collaborations/{id}/moderator-choice", post(moderator_choice))
        .route("/collaborations/{id}/adjustments", post(adjust_proposals))
        .route("/proposals/{id}/alternatives", post(add_alternative))
        .route("/proposals/{id}/conflicts", post(add_conflict))
        .route("/proposals/{id}/decisions", post(submit_decision))
        .route("/policies", get(list_policies))
        .route("/policies/{name}", get(get_policy))
        .route("/mailbox", get(get_mailbox))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NoRoute", "no such endpoint") })
        .with_state(state)
}

fn to_request(command: &str, args: Value) -> Result<Request, ApiError> {
    serde_json::from_value(json!({ "command": command, "args": args })).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn object(body: Value) -> Result<Map<String, Value>, ApiError> {
    match body {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::bad_request("the body must be a JSON object")),
    }
}

/// Executes one request, honouring an idempotency key when present.
async fn execute(
    state: Shared,
    actor: UserId,
    target: Option<CollaborationId>,
    request: Request,
    headers: &HeaderMap,
    success: StatusCode,
) -> Response {
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|k| (actor.clone(), k.to_string()));
    if let Some(key) = &key {
        let mut map = state.idempotency.lock();
        match map.get(key) {
            Some(Idem::Done(status, body)) => return json_bytes(*status, body.clone()),
            Some(Idem::InFlight) => {
                return ApiError::new(StatusCode::CONFLICT, "IdempotencyKeyInUse", "the same key is still being processed")
                    .into_response()
            }
            None => {
                map.insert(key.clone(), Idem::InFlight);
            }
        }
    }
    let engine = state.engine.clone();
    let result = tokio::task::spawn_blocking(move || engine.execute(target.as_ref(), &actor, &request))
        .await
        .unwrap_or_else(|e| Err(GdmError::Storage(format!("worker failed: {e}"))));
    let (status, body) = match result {
        Ok(outcome) => {
            let c = outcome.collaboration;
            let body = Mutation {
                collaboration_id: c.collaboration_id.clone(),
                created: outcome.created,
                state: c.state,
                round: c.current_round,
                events: outcome.events,
                collaboration: c,
            };
            (success, serde_json::to_vec(&body))
        }
        Err(e) => {
            let e = ApiError::from(e);
            (e.status(), serde_json::to_vec(&e))
        }
    };
    let body = Bytes::from(body.expect("responses serialize"));
    if let Some(key) = key {
        let mut map = state.idempotency.lock();
        if status.is_server_error() {
            map.remove(&key);
        } else {
            map.insert(key, Idem::Done(status, body.clone()));
        }
    }
    json_bytes(status, body)
}

fn json_bytes(status: StatusCode, body: Bytes) -> Response {
    (status, [(CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

async fn create_collaboration(
    State(st): State<Shared>,
    Actor(actor): Actor,
    headers: HeaderMap,
    JsonBody(body): JsonBody<Value>,
) -> Response {
    match to_request("createCollaboration", body) {
        Ok(req) => execute(st, actor, None, req, &headers, StatusCode::CREATED).await,
        Err(e) => e.into_response(),
    }
}

/// Handler body shared by the collaboration-scoped commands.
async fn collab_command(st: Shared, actor: UserId, id: String, command: &str, body: Value, headers: &HeaderMap, status: StatusCode) -> Response {
    match to_request(command, body) {
        Ok(req) => execute(st, actor, Some(id.into()), req, headers, status).await,
        Err(e) => e.into_response(),
    }
}

macro_rules! collab_endpoint {
    ($name:ident, $command:literal, $status:expr) => {
        async fn $name(
            State(st): State<Shared>,
            Actor(actor): Actor,
            Path(id): Path<String>,
            headers: HeaderMap,
            JsonBody(body): JsonBody<Value>,
        ) -> Response {
            collab_command(st, actor, id, $command, body, &headers, $status).await
        }
    };
}

collab_endpoint!(define_situation, "defineSituation", StatusCode::OK);
collab_endpoint!(choose_method, "chooseMethod", StatusCode::OK);
collab_endpoint!(notify_actors, "notifyActors", StatusCode::OK);
collab_endpoint!(add_proposal, "addProposal", StatusCode::CREATED);
collab_endpoint!(open_round, "openEvaluation", StatusCode::OK);
collab_endpoint!(close_round, "closeRound", StatusCode::OK);
collab_endpoint!(moderator_choice, "moderatorChoice", StatusCode::OK);
collab_endpoint!(adjust_proposals, "adjustProposals", StatusCode::OK);

async fn add_member(
    State(st): State<Shared>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(user): JsonBody<Value>,
) -> Response {
    collab_command(st, actor, id, "addInvolvedUser", json!({ "user": user }), &headers, StatusCode::OK).await
}

async fn remove_member(
    State(st): State<Shared>,
    Actor(actor): Actor,
    Path((id, user)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    collab_command(st, actor, id, "removeInvolvedUser", json!({ "userId": user }), &headers, StatusCode::OK).await
}

/// Commands addressed to a proposal: the owning collaboration is looked up
/// and `extra` is merged into the body.
#[allow(clippy::too_many_arguments)]
async fn proposal_command(
    st: Shared,
    actor: UserId,
    proposal: String,
    command: &str,
    body: Value,
    extra: Value,
    headers: &HeaderMap,
    status: StatusCode,
) -> Response {
    let collab = match st.engine.collaboration_of_proposal(&proposal) {
        Ok(c) => c,
        Err(e) => return ApiError::from(e).into_response(),
    };
    let mut args = match object(body) {
        Ok(a) => a,
        Err(e) => return e.into_response(),
    };
    if let Value::Object(extra) = extra {
        args.extend(extra);
    }
    match to_request(command, Value::Object(args)) {
        Ok(req) => execute(st, actor, Some(collab), req, headers, status).await,
        Err(e) => e.into_response(),
    }
}

async fn add_alternative(
    State(st): State<Shared>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<Value>,
) -> Response {
    let extra = json!({ "type": "alternative", "refines": id });
    proposal_command(st, actor, id, "addProposal", body, extra, &headers, StatusCode::CREATED).await
}

async fn add_conflict(
    State(st): State<Shared>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<Value>,
) -> Response {
    let extra = json!({ "proposalId": id });
    proposal_command(st, actor, id, "addConflict", body, extra, &headers, StatusCode::OK).await
}

async fn submit_decision(
    State(st): State<Shared>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<Value>,
) -> Response {
    let extra = json!({ "proposalId": id });
    proposal_command(st, actor, id, "submitDecision", body, extra, &headers, StatusCode::CREATED).await
}

async fn list_collaborations(State(st): State<Shared>, _: Actor) -> Json<Vec<CollaborationId>> {
    Json(st.engine.collaboration_ids())
}

async fn get_collaboration(State(st): State<Shared>, _: Actor, Path(id): Path<String>) -> Result<Json<Collaboration>, ApiError> {
    Ok(Json(st.engine.collaboration(&id.into())?))
}

#[derive(Debug, Default, Deserialize)]
struct SummaryQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn get_summary(
    State(st): State<Shared>,
    _: Actor,
    Path(id): Path<String>,
    Query(q): Query<SummaryQuery>,
) -> Result<Response, ApiError> {
    let summary = st.engine.summary(&id.into())?;
    let (mime, text) = match q.format.as_deref().unwrap_or("json") {
        "json" => ("application/json", summary.to_json()),
        "csv" => ("text/csv; charset=utf-8", summary.to_csv()?),
        "md" | "markdown" => ("text/markdown; charset=utf-8", summary.to_markdown()),
        other => return Err(ApiError::bad_request(format!("unknown format {other}"))),
    };
    Ok(([(CONTENT_TYPE, mime)], text).into_response())
}

async fn list_policies(State(st): State<Shared>, _: Actor) -> Response {
    Json(st.engine.policies().list()).into_response()
}

async fn get_policy(State(st): State<Shared>, _: Actor, Path(name): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(st.engine.policies().get(&name)?).into_response())
}

async fn get_mailbox(State(st): State<Shared>, Actor(actor): Actor) -> Json<Vec<Event>> {
    Json(st.engine.bus().mailbox(actor.as_str()))
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: Option<u64>,
    /// Keep the stream open for live events; `false` ends after the backlog.
    #[serde(default)]
    follow: Option<bool>,
}

/// Forwards bus deliveries to one SSE connection.
struct ChannelObserver {
    id: String,
    tx: mpsc::UnboundedSender<Event>,
}

impl Observer for ChannelObserver {
    fn observer_id(&self) -> &str {
        &self.id
    }

    fn update(&self, event: &Event) -> Result<(), String> {
        // A closed receiver is a disconnected client, not a delivery failure.
        let _ = self.tx.send(event.clone());
        Ok(())
    }
}

/// Detaches the stream's observer when the connection goes away.
struct Detach {
    bus: Arc<NotificationBus>,
    id: String,
}

impl Drop for Detach {
    fn drop(&mut self) {
        self.bus.detach(&self.id);
    }
}

struct StreamState {
    backlog: VecDeque<Event>,
    live: Option<mpsc::UnboundedReceiver<Event>>,
    next: u64,
    _detach: Option<Detach>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.body.kind())
        .data(serde_json::to_string(e).expect("events serialize"))
}

async fn stream_events(
    State(st): State<Shared>,
    _: Actor,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let id = CollaborationId::from(id);
    let resume = headers
        .get(LAST_EVENT_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|n| n + 1);
    let from = q.from.into_iter().chain(resume).max().unwrap_or(1).max(1);
    let (live, detach) = if q.follow.unwrap_or(true) {
        // Subscribe before reading the backlog so no event falls in between.
        let observer = format!("sse:{}", st.next_stream.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::unbounded_channel();
        let bus = st.engine.bus().clone();
        bus.attach(Arc::new(ChannelObserver { id: observer.clone(), tx }));
        let detach = Detach { bus: bus.clone(), id: observer.clone() };
        bus.register(&observer, id.as_str(), st.engine.now())?;
        (Some(rx), Some(detach))
    } else {
        (None, None)
    };
    let backlog = st.engine.events_since(&id, from)?;
    let state = StreamState {
        backlog: backlog.into(),
        live,
        next: from,
        _detach: detach,
    };
    let stream = futures::stream::unfold(state, |mut s| async move {
        loop {
            let event = match s.backlog.pop_front() {
                Some(e) => e,
                None => s.live.as_mut()?.recv().await?,
            };
            if event.seq < s.next {
                continue;
            }
            s.next = event.seq + 1;
            return Some((Ok(sse_event(&event)), s));
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] GdmError),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the engine described by `config`, opening its log if one is set.
pub fn engine_from_config(config: &ServerConfig) -> Result<Engine, ServeError> {
    let engine_config = config.engine_config()?;
    let clock = Arc::new(gdm_core::time::SystemClock);
    Ok(match &config.log {
        Some(path) => Engine::open(path, clock, engine_config)?,
        None => Engine::in_memory(clock, engine_config),
    })
}

/// Serves until interrupted.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let engine = Arc::new(engine_from_config(&config)?);
    if let Some(e) = engine.recovered_corruption() {
        eprintln!("log recovered: {e}");
    }
    let app = router(AppState::new(engine, config.tokens.clone()));
    let listener = tokio::net::TcpListener::bind((config.bind.as_str(), config.port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
