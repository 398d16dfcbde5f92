//! HTTP handlers for `/api/v1`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use aeromine_core::oracle::{QueueError, Readings};
use aeromine_core::{EngineError, EvaluationRecord, Genome, RunConfig, RunMode, Violation};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::registry::{Registry, RegistryError, RunHandle};

/// How long a submission waits for the engine to journal it.
const COMMIT_TIMEOUT: Duration = Duration::from_secs(30);

/// A JSON error body: `{"error": {"code", "message", ...details}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn with(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what}"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(Value::Object(extra)) = self.details {
            error.as_object_mut().expect("object literal").extend(extra);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

fn invalid_config(violations: &[Violation]) -> ApiError {
    ApiError::new(
        StatusCode::UNPROCESSABLE_ENTITY,
        "invalid_config",
        format!("{} configuration violation(s)", violations.len()),
    )
    .with(json!({ "violations": violations }))
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Engine(EngineError::Config(v)) => invalid_config(&v),
            other => ApiError::internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn header_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

fn run_of(registry: &Registry, run_id: &str) -> ApiResult<Arc<RunHandle>> {
    registry.get(run_id).ok_or_else(|| ApiError::not_found("run"))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/api/v1/runs", post(create_run).get(list_runs))
        .route("/api/v1/runs/{id}", get(get_run))
        .route("/api/v1/runs/{id}/pending", get(get_pending))
        .route("/api/v1/runs/{id}/results", post(submit_result))
        .route("/api/v1/runs/{id}/archive", get(get_archive))
        .route("/api/v1/runs/{id}/surrogate/{position}", get(get_surrogate))
        .route("/api/v1/runs/{id}/events", get(events))
        .with_state(registry)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    config: RunConfig,
    #[serde(default)]
    mode: RunMode,
    #[serde(default)]
    idempotency_key: Option<String>,
}

fn run_summary(h: &RunHandle) -> Value {
    let state = h.snapshot();
    json!({
        "run_id": h.run_id,
        "status": state.status,
        "mode": h.mode,
        "oracle": state.config.oracle,
        "journal": h.journal_path,
        "positions": state.config.positions,
        "budget": state.config.budget,
        "calls": state.calls(),
        "round": state.round,
        "best_fitness": state.best_record().map(|r| r.fitness),
        "error": h.error(),
    })
}

async fn create_run(
    State(registry): State<Arc<Registry>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: CreateRun = parse_body(&body)?;
    let key = req.idempotency_key.or_else(|| header_key(&headers));
    if let Err(v) = req.config.validate() {
        return Err(invalid_config(&v));
    }
    let reg = registry.clone();
    let (handle, created) =
        tokio::task::spawn_blocking(move || reg.start(req.config, req.mode, key))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    let mut body = run_summary(&handle);
    body["replayed"] = json!(!created);
    Ok((status, Json(body)).into_response())
}

async fn list_runs(State(registry): State<Arc<Registry>>) -> Json<Value> {
    let runs: Vec<Value> = registry.list().iter().map(|h| run_summary(h)).collect();
    Json(json!({ "runs": runs }))
}

fn elite_view(position: usize, r: &EvaluationRecord) -> Value {
    let design: &Genome = &r.configuration.genomes[position];
    json!({
        "position": position + 1,
        "record_id": r.record_id,
        "fitness": r.fitness,
        "design": design,
        "configuration": r.configuration,
    })
}

async fn get_run(State(registry): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = run_of(&registry, &id)?;
    let state = h.snapshot();
    let mut body = run_summary(&h);
    let elites: Vec<Value> = (0..state.config.positions)
        .filter_map(|p| state.elite_record(p).map(|r| elite_view(p, r)))
        .collect();
    body["config"] = json!(state.config);
    body["remaining"] = json!(state.remaining());
    body["best"] = json!(state.best_record().map(|r| json!({
        "record_id": r.record_id,
        "fitness": r.fitness,
        "configuration": r.configuration,
    })));
    body["elites"] = json!(elites);
    body["outstanding"] = json!(state.outstanding.iter().map(|p| p.pending_id()).collect::<Vec<_>>());
    body["last_event_id"] = json!(h.last_seq());
    Ok(Json(body))
}

async fn get_pending(State(registry): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = run_of(&registry, &id)?;
    Ok(Json(json!({ "run_id": h.run_id, "status": h.status(), "pending": h.pending() })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitResult {
    pending_id: String,
    readings: Readings,
    #[serde(default)]
    idempotency_key: Option<String>,
}

fn ack(run_id: &str, r: &EvaluationRecord, replayed: bool) -> Value {
    json!({
        "run_id": run_id,
        "pending_id": r.pending_id,
        "record_id": r.record_id,
        "fitness": r.fitness,
        "readings": r.readings,
        "replayed": replayed,
    })
}

fn queue_error(e: QueueError) -> ApiError {
    match e {
        QueueError::UnknownId(id) => ApiError::not_found(&format!("pending id `{id}`")),
        QueueError::DimensionMismatch { rows, columns, issues } => ApiError::new(
            StatusCode::BAD_REQUEST,
            "dimension_mismatch",
            format!("readings must be {rows} wind speeds x {columns} positions"),
        )
        .with(json!({ "rows": rows, "columns": columns, "issues": issues })),
        e @ (QueueError::AlreadySubmitted(_) | QueueError::Cancelled(_) | QueueError::Closed) => {
            ApiError::conflict(e.to_string())
        }
        QueueError::DuplicateId(id) => ApiError::internal(format!("duplicate pending id `{id}`")),
    }
}

async fn submit_result(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let h = run_of(&registry, &id)?;
    let req: SubmitResult = parse_body(&body)?;
    let key = req.idempotency_key.or_else(|| header_key(&headers));
    let Some(queue) = h.queue().cloned() else {
        return Err(ApiError::conflict("run does not take manual measurements"));
    };

    if let Some(record) = h.committed_record(&req.pending_id) {
        return match (&record.idempotency_key, &key) {
            (Some(a), Some(b)) if a == b => Ok(Json(ack(&h.run_id, &record, true))),
            _ => Err(ApiError::conflict(format!("`{}` already submitted", req.pending_id))),
        };
    }

    let pending_id = req.pending_id.clone();
    let handle = h.clone();
    let record = tokio::task::spawn_blocking(move || -> ApiResult<(EvaluationRecord, bool)> {
        let submission = match queue.submit(&pending_id, req.readings, key) {
            Ok(s) => s,
            Err(QueueError::UnknownId(_)) if handle.was_issued(&pending_id) => {
                return Err(ApiError::conflict(format!("`{pending_id}` is no longer awaiting a measurement")));
            }
            Err(e) => return Err(queue_error(e)),
        };
        if queue.wait_committed(&pending_id, COMMIT_TIMEOUT).is_none() {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "not_committed",
                "measurement accepted but not yet journaled",
            ));
        }
        let record = handle
            .committed_record(&pending_id)
            .ok_or_else(|| ApiError::internal("journaled record not found"))?;
        Ok((record, submission.replayed))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(ack(&h.run_id, &record.0, record.1)))
}

#[derive(Debug, Deserialize)]
struct ArchiveQuery {
    position: Option<usize>,
}

async fn get_archive(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<ArchiveQuery>,
) -> ApiResult<Json<Value>> {
    let h = run_of(&registry, &id)?;
    let state = h.snapshot();
    let records: Vec<&EvaluationRecord> = match q.position {
        None => state.records.iter().collect(),
        Some(p) if (1..=state.config.positions).contains(&p) => state.archive(p - 1).collect(),
        Some(p) => {
            return Err(ApiError::bad_request(format!(
                "position {p} outside 1..={}",
                state.config.positions
            )))
        }
    };
    Ok(Json(json!({ "run_id": h.run_id, "position": q.position, "records": records })))
}

async fn get_surrogate(
    State(registry): State<Arc<Registry>>,
    Path((id, position)): Path<(String, usize)>,
) -> ApiResult<Json<Value>> {
    let h = run_of(&registry, &id)?;
    let state = h.snapshot();
    if !(1..=state.config.positions).contains(&position) {
        return Err(ApiError::not_found("position"));
    }
    if state.archive(position - 1).next().is_none() {
        return Err(ApiError::conflict("no measurements for this position yet"));
    }
    let body = tokio::task::spawn_blocking(move || -> ApiResult<Value> {
        let p = position - 1;
        let (model, curve) = state.fit_surrogate(p).map_err(|e| ApiError::internal(e.to_string()))?;
        let codec = state.codec();
        let points = state
            .archive(p)
            .map(|r| {
                let x = codec.input(&r.configuration).map_err(|e| ApiError::internal(e.to_string()))?;
                let predicted = model.predict(&x).map_err(|e| ApiError::internal(e.to_string()))?;
                Ok(json!({ "record_id": r.record_id, "measured": r.fitness, "predicted": predicted }))
            })
            .collect::<ApiResult<Vec<Value>>>()?;
        Ok(json!({
            "position": position,
            "round": state.round,
            "rows": points.len(),
            "input_dim": model.input_dim(),
            "hidden_units": model.hidden_units(),
            "target_mean": model.target_mean(),
            "target_std": model.target_std(),
            "epochs_run": model.train_meta().epochs_run,
            "final_loss": model.train_meta().final_loss,
            "training_curve": curve,
            "points": points,
        }))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
}

struct Cursor {
    handle: Arc<RunHandle>,
    next: usize,
    /// Unnumbered entries before this index are history and are skipped.
    live_from: usize,
    rx: tokio::sync::watch::Receiver<usize>,
    greeting: Option<Event>,
}

fn to_sse(kind: &str, seq: Option<u64>, data: &Value) -> Event {
    let event = Event::default().event(kind).data(data.to_string());
    match seq {
        Some(s) => event.id(s.to_string()),
        None => event,
    }
}

async fn events(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let h = run_of(&registry, &id)?;
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.last_event_id)
        .unwrap_or(0);
    let rx = h.subscribe();
    let (next, live_from) = h.cursor_after(last);
    let state = h.snapshot();
    let greeting = to_sse(
        "status",
        None,
        &json!({ "status": state.status, "round": state.round, "calls": state.calls(), "error": h.error() }),
    );
    let cursor = Cursor {
        handle: h,
        next,
        live_from,
        rx,
        greeting: Some(greeting),
    };
    let stream = stream::unfold(cursor, |mut c| async move {
        if let Some(g) = c.greeting.take() {
            return Some((Ok(g), c));
        }
        loop {
            let pending = c.handle.events_from(c.next);
            if let Some((offset, e)) = pending
                .iter()
                .enumerate()
                .find(|(i, e)| e.seq.is_some() || c.next + i >= c.live_from)
            {
                let event = to_sse(e.kind, e.seq, &e.data);
                c.next += offset + 1;
                return Some((Ok(event), c));
            }
            c.next += pending.len();
            if c.handle.is_done() && c.handle.events_from(c.next).is_empty() {
                return None;
            }
            if c.rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
