//! The annotation API over a paused run.

use std::sync::{Arc, Mutex, MutexGuard};

use amrule_core::annotation::{Decision, SessionItem};
use amrule_core::orchestrator::{IterationMetrics, Run, RunMetrics, Stage};
use amrule_core::prompt_rules::LmClient;
use amrule_core::rules::{AcceptedRule, RuleId};
use amrule_core::Error;
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub type SharedLm = Box<dyn LmClient + Send + Sync>;

/// The run and the language model it talks to. One stage runs at a time;
/// the mutex serializes session writes.
pub struct Service {
    pub run: Run,
    pub lm: SharedLm,
}

#[derive(Clone)]
pub struct AppState(Arc<Mutex<Service>>);

impl AppState {
    pub fn new(service: Service) -> Self {
        AppState(Arc::new(Mutex::new(service)))
    }

    fn lock(&self) -> MutexGuard<'_, Service> {
        // a panicked handler leaves the run as last committed
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, kind) = match &self.0 {
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::IncompleteSession { .. } => (StatusCode::CONFLICT, "incomplete_session"),
            Error::State(_) => (StatusCode::CONFLICT, "state"),
            Error::Transport { .. } => (StatusCode::BAD_GATEWAY, "transport"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = serde_json::json!({ "error": self.0.to_string(), "kind": kind });
        if let Error::IncompleteSession { pending } = &self.0 {
            body["pending"] = (*pending).into();
        }
        (code, Json(body)).into_response()
    }
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError(Error::Validation(e.body_text()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub iteration: usize,
    pub stage: Stage,
    pub planned_iterations: usize,
    pub candidates: usize,
    pub pending: usize,
}

fn status_of(run: &Run) -> Status {
    let (candidates, pending) = match run.session() {
        Some(s) if run.state.stage == Stage::Annotation => (s.items.len(), s.pending().len()),
        _ => (0, 0),
    };
    Status {
        iteration: run.state.iteration,
        stage: run.state.stage,
        planned_iterations: run.planned_iterations(),
        candidates,
        pending,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    #[serde(flatten)]
    pub item: SessionItem,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub iteration: usize,
    pub budget: usize,
    pub open: bool,
    pub pending: Vec<RuleId>,
    pub candidates: Vec<Card>,
}

/// A single decision or a batch.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Submission {
    One(Decision),
    Many(Vec<Decision>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    /// Decisions that changed the session (repeats are not counted).
    pub recorded: usize,
    pub decided: Vec<RuleId>,
    pub pending: Vec<RuleId>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FinalizeRequest {
    /// Iteration the caller means to finalize; a repeat for an iteration that
    /// already completed returns its outcome instead of touching the next
    /// session.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub iteration: usize,
    pub accepted: Vec<AcceptedRule>,
    pub metrics: Option<IterationMetrics>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub iterations: Vec<IterationMetrics>,
    pub summary: Option<RunMetrics>,
}

async fn run_status(State(app): State<AppState>) -> Json<Status> {
    Json(status_of(&app.lock().run))
}

fn current_view(run: &Run) -> Result<SessionView, ApiError> {
    let session = run
        .session()
        .ok_or_else(|| Error::NotFound("no annotation session is open".into()))?;
    Ok(SessionView {
        iteration: session.iteration,
        budget: session.budget,
        open: session.is_open(),
        pending: session.pending().into_iter().cloned().collect(),
        candidates: session
            .items
            .iter()
            .map(|i| Card {
                item: i.clone(),
                decision: session.decisions.get(&i.rule.id).cloned(),
            })
            .collect(),
    })
}

async fn current_session(State(app): State<AppState>) -> Result<Json<SessionView>, ApiError> {
    current_view(&app.lock().run).map(Json)
}

async fn current_candidates(State(app): State<AppState>) -> Result<Json<Vec<Card>>, ApiError> {
    current_view(&app.lock().run).map(|v| Json(v.candidates))
}

async fn submit(
    State(app): State<AppState>,
    body: Result<Json<Submission>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let Json(body) = body.map_err(bad_body)?;
    let decisions = match body {
        Submission::One(d) => vec![d],
        Submission::Many(ds) => ds,
    };
    let mut svc = app.lock();
    let recorded = svc.run.submit(decisions)?;
    let session = svc.run.session().ok_or_else(|| Error::State("session vanished".into()))?;
    Ok(Json(SubmitResponse {
        recorded,
        decided: session.decisions.keys().cloned().collect(),
        pending: session.pending().into_iter().cloned().collect(),
    }))
}

/// Completes the iteration and trains the next model when one remains.
fn finalize_blocking(svc: &mut Service, req: FinalizeRequest) -> Result<FinalizeResponse, Error> {
    let current = svc.run.state.iteration;
    if let Some(t) = req.iteration {
        let completed = svc.run.state.metrics.iter().find(|m| m.iteration == t);
        if let (Some(m), true) = (completed, t < current || svc.run.state.stage != Stage::Annotation) {
            return Ok(FinalizeResponse {
                iteration: t,
                accepted: svc.run.state.ledger.accepted.iter().filter(|r| r.iteration == t).cloned().collect(),
                metrics: Some(m.clone()),
                status: status_of(&svc.run),
            });
        }
        if t != current {
            return Err(Error::NotFound(format!("iteration {t} has no session")));
        }
    }
    let Service { run, lm } = svc;
    run.complete_iteration(lm)?;
    let metrics = run.state.metrics.last().cloned();
    let accepted = run.state.ledger.accepted.iter().filter(|r| r.iteration == current).cloned().collect();
    if run.state.stage == Stage::Training {
        run.begin_iteration(lm)?;
    }
    Ok(FinalizeResponse {
        iteration: current,
        accepted,
        metrics,
        status: status_of(run),
    })
}

async fn finalize(
    State(app): State<AppState>,
    body: Option<Json<FinalizeRequest>>,
) -> Result<Json<FinalizeResponse>, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let task = tokio::task::spawn_blocking(move || finalize_blocking(&mut app.lock(), req));
    let out = task
        .await
        .map_err(|e| Error::State(format!("finalize task failed: {e}")))?;
    Ok(Json(out?))
}

async fn metrics(State(app): State<AppState>) -> Json<MetricsView> {
    let svc = app.lock();
    Json(MetricsView {
        iterations: svc.run.state.metrics.clone(),
        summary: svc.run.metrics().ok(),
    })
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/api/run/status", get(run_status))
        .route("/api/sessions/current", get(current_session))
        .route("/api/sessions/current/candidates", get(current_candidates))
        .route("/api/sessions/current/decisions", post(submit))
        .route("/api/sessions/current/finalize", post(finalize))
        .route("/api/metrics", get(metrics))
        .with_state(app)
}

/// Brings a run to its next annotation stage (training if needed) so the
/// service has a session to show.
pub fn prepare(svc: &mut Service) -> Result<(), Error> {
    if svc.run.state.stage == Stage::Training {
        let Service { run, lm } = svc;
        run.begin_iteration(lm)?;
    }
    Ok(())
}
