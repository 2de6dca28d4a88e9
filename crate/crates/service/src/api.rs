//! HTTP API over storyboard sessions.
//!
//! Every route lives under `/v1`. Runs execute on their own OS thread; the
//! events endpoint replays a run's trace as NDJSON and then follows it until
//! a terminator line `{"event": "done" | "cancelled" | "error"}`.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sketchloop_core::guidance::{NoiseSchedule, WeightFn};
use sketchloop_core::optimize::{CancelToken, OptimizeConfig, RunStatus, TraceEvent};
use sketchloop_core::session::{EditOp, FrameStatus, Session, SessionSettings, StoryboardFrame};
use tokio::sync::watch;

use crate::backend::GuidanceSpec;
use crate::error::{ApiError, ErrorCode};
use crate::store::FileStore;

type ApiResult<T> = Result<T, ApiError>;

pub struct AppConfig {
    pub guidance: GuidanceSpec,
    /// Settings for sessions created without explicit overrides.
    pub defaults: SessionSettings,
    pub store: Option<FileStore>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

struct Inner {
    config: AppConfig,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
}

struct Slot {
    session: Mutex<Session>,
    /// Latest run log per frame index.
    runs: Mutex<HashMap<usize, Arc<RunLog>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Trace lines of one run plus a change counter for followers.
struct RunLog {
    cancel: CancelToken,
    lines: Mutex<Vec<(Option<u32>, String)>>,
    finished: Mutex<bool>,
    tick: watch::Sender<u64>,
}

impl RunLog {
    fn new(cancel: CancelToken) -> Self {
        Self {
            cancel,
            lines: Mutex::new(Vec::new()),
            finished: Mutex::new(false),
            tick: watch::channel(0).0,
        }
    }

    fn push(&self, iter: Option<u32>, line: String) {
        lock(&self.lines).push((iter, line));
        self.tick.send_modify(|v| *v += 1);
    }

    fn finish(&self, terminator: serde_json::Value) {
        self.push(None, terminator.to_string());
        *lock(&self.finished) = true;
        self.tick.send_modify(|v| *v += 1);
    }

    /// Lines from `from` on, and whether the log is complete.
    fn read_from(&self, from: usize) -> (Vec<(Option<u32>, String)>, bool) {
        let done = *lock(&self.finished);
        let lines = lock(&self.lines);
        (lines.get(from..).map(<[_]>::to_vec).unwrap_or_default(), done)
    }
}

impl AppState {
    /// Builds the state, loading persisted sessions if a store is configured.
    pub fn new(config: AppConfig) -> std::io::Result<Self> {
        let mut sessions = HashMap::new();
        if let Some(store) = &config.store {
            for s in store.load_all()? {
                sessions.insert(s.id.clone(), Arc::new(Slot { session: Mutex::new(s), runs: Mutex::new(HashMap::new()) }));
            }
        }
        Ok(Self(Arc::new(Inner { config, sessions: Mutex::new(sessions) })))
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        lock(&self.0.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id} does not exist")))
    }

    fn persist(&self, session: &Session) -> ApiResult<()> {
        match &self.0.config.store {
            Some(store) => store.save(session).map_err(|e| ApiError::internal(format!("persisting session: {e}"))),
            None => Ok(()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/frames", post(add_frame))
        .route("/v1/sessions/{id}/frames/{k}/edits", post(edit_frame))
        .route("/v1/sessions/{id}/frames/{k}/run", post(run_frame))
        .route("/v1/sessions/{id}/frames/{k}/cancel", post(cancel_frame))
        .route("/v1/sessions/{id}/frames/{k}/events", get(frame_events))
        .route("/v1/sessions/{id}/storyboard.svg", get(storyboard))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Parses an optional JSON body; an empty body yields the default.
fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn json_text(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn frame_json(status: StatusCode, frame: &StoryboardFrame) -> Response {
    (status, Json(frame)).into_response()
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "ok": true }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    seed_base: Option<u64>,
    canvas_w: Option<u32>,
    canvas_h: Option<u32>,
    strokes: Option<usize>,
    segments: Option<usize>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_body(&body)?;
    let mut settings = state.0.config.defaults.clone();
    settings.canvas_w = req.canvas_w.unwrap_or(settings.canvas_w);
    settings.canvas_h = req.canvas_h.unwrap_or(settings.canvas_h);
    settings.strokes = req.strokes.unwrap_or(settings.strokes);
    settings.segments = req.segments.unwrap_or(settings.segments);
    if settings.canvas_w == 0 || settings.canvas_h == 0 || settings.segments == 0 {
        return Err(ApiError::bad_request("canvas sides and segments must be at least 1"));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), req.seed_base.unwrap_or(0), settings);
    state.persist(&session)?;
    let slot = Arc::new(Slot { session: Mutex::new(session), runs: Mutex::new(HashMap::new()) });
    lock(&state.0.sessions).insert(id.clone(), slot);
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let text = lock(&slot.session).to_json();
    Ok(json_text(StatusCode::OK, text))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddFrame {
    template: String,
    #[serde(default)]
    inherit: bool,
}

async fn add_frame(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AddFrame = parse_body(&body)?;
    let slot = state.slot(&id)?;
    let mut session = lock(&slot.session);
    let frame = session.add_frame(&req.template, req.inherit, None)?.clone();
    state.persist(&session)?;
    Ok(frame_json(StatusCode::CREATED, &frame))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Edits {
    ops: Vec<EditOp>,
}

/// Applies all ops or none.
async fn edit_frame(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: Edits = parse_body(&body)?;
    let slot = state.slot(&id)?;
    let mut session = lock(&slot.session);
    let saved = session.frame(k)?.clone();
    for op in &req.ops {
        if let Err(e) = session.apply_edit(k, op) {
            session.frames[k] = saved;
            return Err(e.into());
        }
    }
    state.persist(&session)?;
    Ok(frame_json(StatusCode::OK, session.frame(k)?))
}

/// Per-run adjustments layered over the frame config.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    pub iterations: Option<u32>,
    pub lr: Option<f64>,
    pub omega: Option<f64>,
    pub t_range: Option<(u32, u32)>,
    pub weight: Option<WeightFn>,
    pub negative_prompt: Option<String>,
    pub snapshot_every: Option<u32>,
    pub prune_every: Option<u32>,
    pub batch: Option<u32>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut OptimizeConfig) {
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.lr {
            cfg.adam.lr = v;
        }
        if let Some(v) = self.omega {
            cfg.guidance.omega = v;
        }
        if let Some(v) = self.t_range {
            cfg.guidance.t_range = v;
        }
        if let Some(v) = self.weight {
            cfg.guidance.weight = v;
        }
        if let Some(v) = &self.negative_prompt {
            cfg.guidance.negative_prompt = Some(v.clone());
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
        if let Some(v) = self.prune_every {
            cfg.prune_every = v;
        }
        if let Some(v) = self.batch {
            cfg.augment.batch = v;
        }
    }
}

fn terminator(outcome: &Result<sketchloop_core::optimize::RunOutcome, sketchloop_core::optimize::RunFailure>) -> serde_json::Value {
    match outcome {
        Ok(o) if o.status == RunStatus::Completed => json!({ "event": "done" }),
        Ok(_) => json!({ "event": "cancelled" }),
        Err(f) => json!({ "event": "error", "message": f.to_string() }),
    }
}

async fn run_frame(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
    body: Bytes,
) -> ApiResult<Response> {
    let overrides: RunOverrides = parse_body(&body)?;
    let slot = state.slot(&id)?;
    let mut session = lock(&slot.session);
    if let Some(r) = session.running_frame() {
        return Err(ApiError::new(ErrorCode::Busy, format!("frame {r} is already running")));
    }
    let frame = session.frame(k)?;
    let mut cfg = frame.config.clone();
    overrides.apply(&mut cfg);
    cfg.validate(&NoiseSchedule::default()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let engine = state
        .0
        .config
        .guidance
        .engine(&frame.base_sketch(), &cfg)
        .map_err(|e| ApiError::new(ErrorCode::BackendUnavailable, e.to_string()))?;
    let req = session.begin_run(k, Some(cfg))?;
    state.persist(&session)?;
    drop(session);

    let cancel = CancelToken::new();
    let log = Arc::new(RunLog::new(cancel.clone()));
    lock(&slot.runs).insert(k, log.clone());
    let thread_state = state.clone();
    let thread_slot = slot.clone();
    std::thread::Builder::new()
        .name(format!("run-{id}-{k}"))
        .spawn(move || {
            let outcome = req.execute(&engine, &mut |e: &TraceEvent| log.push(Some(e.iter), e.to_json_line()), &cancel);
            let term = terminator(&outcome);
            {
                let mut session = lock(&thread_slot.session);
                if let Err(e) = session.finish_run(k, outcome) {
                    tracing::error!("finishing run of frame {k}: {e}");
                }
                if let Err(e) = thread_state.persist(&session) {
                    tracing::warn!("{}", e.message);
                }
            }
            log.finish(term);
        })
        .map_err(|e| ApiError::internal(format!("spawning run thread: {e}")))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "session": id, "frame": k, "status": "running" }))).into_response())
}

async fn cancel_frame(State(state): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let status = lock(&slot.session).frame(k)?.status;
    if status != FrameStatus::Running {
        return Err(ApiError::bad_request(format!("frame {k} is not running")));
    }
    if let Some(log) = lock(&slot.runs).get(&k) {
        log.cancel.cancel();
    }
    Ok(Json(json!({ "session": id, "frame": k, "status": status, "cancel_requested": true })).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    /// Skip trace events up to and including this iteration.
    after: Option<u32>,
}

#[derive(Serialize)]
struct Terminal<'a> {
    event: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
}

fn ndjson(body: Body) -> Response {
    (StatusCode::OK, [(header::CONTENT_TYPE, "application/x-ndjson"), (header::CACHE_CONTROL, "no-cache")], body).into_response()
}

async fn frame_events(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let frame = lock(&slot.session).frame(k)?.clone();
    let log = lock(&slot.runs).get(&k).cloned();
    let Some(log) = log else {
        // No run in this process; report the persisted outcome, if any.
        let term = match (frame.status, frame.error.as_deref()) {
            (FrameStatus::Done, _) => Terminal { event: "done", message: None },
            (FrameStatus::Cancelled, _) => Terminal { event: "cancelled", message: None },
            (_, Some(msg)) => Terminal { event: "error", message: Some(msg) },
            _ => return Err(ApiError::not_found(format!("frame {k} has not been run"))),
        };
        let line = format!("{}\n", serde_json::to_string(&term).expect("terminal serializes"));
        return Ok(ndjson(Body::from(line)));
    };

    let after = q.after;
    let rx = log.tick.subscribe();
    let stream = futures::stream::unfold((log, rx, 0usize, false), move |(log, mut rx, pos, ended)| async move {
        if ended {
            return None;
        }
        loop {
            let (lines, finished) = log.read_from(pos);
            if !lines.is_empty() {
                let next = pos + lines.len();
                let mut chunk = String::new();
                for (iter, line) in &lines {
                    if matches!((iter, after), (Some(i), Some(a)) if *i <= a) {
                        continue;
                    }
                    chunk.push_str(line);
                    chunk.push('\n');
                }
                // The terminator is always the last line written.
                let ended = finished && lines.last().is_some_and(|(iter, _)| iter.is_none());
                return Some((Ok::<_, Infallible>(Bytes::from(chunk)), (log, rx, next, ended)));
            }
            if finished {
                return None;
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(ndjson(Body::from_stream(stream)))
}

async fn storyboard(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let svg = lock(&slot.session).export_storyboard()?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
