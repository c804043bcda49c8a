//! JSON-over-HTTP API for running audits.
//!
//! Mutations of one audit go through that audit's writer lock; reads use the
//! snapshot published after the last mutation.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use r2audit_core::planner::{next_round_size, whatif};
use r2audit_core::{
    AuditConfig, AuditState, ContestRecord, Mark, PlannerOptions, PlannerResult, RoundObservation,
    RoundSchedule, Rule, StoppingEvaluation, WhatIf,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::error::ServiceError;
use crate::session::{round_evaluation, sig12, Session, SessionDocument, SCHEMA_VERSION};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn not_found(what: String) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("{what} not found"),
        )
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use r2audit_core::Error as E;
        let message = e.to_string();
        match e {
            ServiceError::Core(E::ScheduleViolation {
                round,
                expected,
                actual,
            }) => ApiError {
                status: StatusCode::CONFLICT,
                code: "schedule_violation",
                message,
                details: Some(json!({
                    "round": round,
                    "expected": expected,
                    "actual": actual,
                    "instructions": format!(
                        "round {round} is scheduled to end at {expected} cumulative relevant ballots; \
                         resend the observation with \"amend\": true to amend the schedule to {actual}, \
                         or POST a new schedule to /audits/{{id}}/schedule first"
                    ),
                })),
            },
            ServiceError::VersionConflict { expected, actual } => ApiError {
                status: StatusCode::CONFLICT,
                code: "version_conflict",
                message,
                details: Some(json!({ "expected_version": expected, "current_version": actual })),
            },
            ServiceError::Core(E::State(_)) => {
                ApiError::new(StatusCode::CONFLICT, "invalid_state", message)
            }
            ServiceError::NotFound(what) => ApiError::not_found(what),
            ServiceError::Core(E::Invariant(_)) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invariant_violation",
                message,
            ),
            ServiceError::Core(E::Domain(_) | E::Config(_) | E::Usage(_) | E::Data { .. })
            | ServiceError::Usage(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl From<r2audit_core::Error> for ApiError {
    fn from(e: r2audit_core::Error) -> Self {
        ServiceError::from(e).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_payload",
            e.body_text(),
        )
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_query",
            e.body_text(),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.code,
            "message": self.message,
        });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct AuditSlot {
    writer: Arc<Mutex<Session>>,
    snapshot: RwLock<Arc<Snapshot>>,
}

/// Read-side copy of an audit, replaced after every mutation.
struct Snapshot {
    document: SessionDocument,
    state: AuditState,
    contest: ContestRecord,
}

impl Snapshot {
    fn of(session: &Session) -> Arc<Snapshot> {
        Arc::new(Snapshot {
            document: session.document(),
            state: session.state().clone(),
            contest: session.contest().clone(),
        })
    }
}

impl AuditSlot {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

#[derive(Default)]
pub struct AppState {
    contests: RwLock<HashMap<String, ContestRecord>>,
    audits: RwLock<HashMap<String, Arc<AuditSlot>>>,
    next_contest: AtomicU64,
    next_audit: AtomicU64,
    data_dir: Option<PathBuf>,
    planner: PlannerOptions,
}

impl AppState {
    /// State whose audits are journaled under `data_dir`, reloading any journals found there.
    pub fn with_data_dir(data_dir: PathBuf) -> crate::Result<Self> {
        std::fs::create_dir_all(&data_dir)?;
        let state = AppState {
            data_dir: Some(data_dir.clone()),
            ..AppState::default()
        };
        for entry in std::fs::read_dir(&data_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let session = Session::load(&path)?;
                log::info!(
                    "reloaded audit {} at version {}",
                    session.id(),
                    session.version()
                );
                state.insert_audit(session);
            }
        }
        Ok(state)
    }

    fn fresh_id(&self, prefix: &str) -> String {
        let counter = if prefix == "c" {
            &self.next_contest
        } else {
            &self.next_audit
        };
        loop {
            let id = format!("{prefix}{}", counter.fetch_add(1, Ordering::Relaxed) + 1);
            let taken = self.audits.read().expect("audits lock").contains_key(&id)
                || self
                    .contests
                    .read()
                    .expect("contests lock")
                    .contains_key(&id);
            if !taken {
                return id;
            }
        }
    }

    fn insert_audit(&self, session: Session) -> Arc<AuditSlot> {
        let id = session.id().to_string();
        let slot = Arc::new(AuditSlot {
            snapshot: RwLock::new(Snapshot::of(&session)),
            writer: Arc::new(Mutex::new(session)),
        });
        self.audits
            .write()
            .expect("audits lock")
            .insert(id, slot.clone());
        slot
    }

    fn audit(&self, id: &str) -> ApiResult<Arc<AuditSlot>> {
        self.audits
            .read()
            .expect("audits lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("audit {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/contests", post(create_contest))
        .route("/contests/{id}", get(get_contest))
        .route("/audits", post(create_audit))
        .route("/audits/{id}", get(get_audit))
        .route("/audits/{id}/rounds", post(post_round))
        .route("/audits/{id}/schedule", post(post_schedule))
        .route("/audits/{id}/next-round", get(next_round))
        .route("/audits/{id}/whatif", get(get_whatif))
        .route("/audits/{id}/escalate", post(escalate))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct ContestInput {
    pub name: String,
    pub tallies: BTreeMap<String, u64>,
    pub total_ballots: u64,
}

#[derive(Debug, Serialize)]
struct ContestResponse {
    schema_version: u32,
    id: String,
    contest: ContestRecord,
    margin: f64,
    p: f64,
}

fn contest_response(id: String, contest: ContestRecord) -> ContestResponse {
    ContestResponse {
        schema_version: SCHEMA_VERSION,
        margin: sig12(contest.margin()),
        p: sig12(contest.p()),
        id,
        contest,
    }
}

async fn create_contest(
    State(app): State<Arc<AppState>>,
    body: Result<Json<ContestInput>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ContestResponse>)> {
    let Json(input) = body?;
    let contest = ContestRecord::from_tallies(input.name, input.tallies, input.total_ballots)?;
    let id = app.fresh_id("c");
    app.contests
        .write()
        .expect("contests lock")
        .insert(id.clone(), contest.clone());
    Ok((StatusCode::CREATED, Json(contest_response(id, contest))))
}

async fn get_contest(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ContestResponse>> {
    let contest = app
        .contests
        .read()
        .expect("contests lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("contest {id}")))?;
    Ok(Json(contest_response(id, contest)))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleInput {
    Explicit {
        sizes: Vec<u64>,
    },
    Geometric {
        first: u64,
        multiplier: f64,
        rounds: usize,
    },
}

impl ScheduleInput {
    pub fn build(&self) -> r2audit_core::Result<RoundSchedule> {
        match self {
            ScheduleInput::Explicit { sizes } => RoundSchedule::explicit(sizes.clone()),
            ScheduleInput::Geometric {
                first,
                multiplier,
                rounds,
            } => RoundSchedule::geometric(*first, *multiplier, *rounds),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateAudit {
    pub contest_id: String,
    pub rule: Rule,
    pub alpha: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub allow_small_delta: bool,
    pub schedule: ScheduleInput,
}

#[derive(Debug, Serialize)]
struct AuditCreated {
    schema_version: u32,
    id: String,
    audit: SessionDocument,
}

async fn create_audit(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateAudit>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AuditCreated>)> {
    let Json(input) = body?;
    let contest = app
        .contests
        .read()
        .expect("contests lock")
        .get(&input.contest_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("contest {}", input.contest_id)))?;
    let mut cfg = AuditConfig::new(input.rule, contest.p(), input.alpha)?;
    cfg.allow_small_delta = input.allow_small_delta;
    let cfg = match input.delta {
        Some(d) => cfg.with_delta(d)?,
        None => cfg,
    };
    let schedule = input.schedule.build()?;
    let id = app.fresh_id("a");
    let journal = app.data_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")));
    let session = Session::create(id.clone(), contest, cfg, schedule, journal)?;
    let slot = app.insert_audit(session);
    Ok((
        StatusCode::CREATED,
        Json(AuditCreated {
            schema_version: SCHEMA_VERSION,
            id,
            audit: slot.snapshot().document.clone(),
        }),
    ))
}

async fn get_audit(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionDocument>> {
    Ok(Json(app.audit(&id)?.snapshot().document.clone()))
}

/// Run a mutation under the audit's writer lock on the blocking pool, then publish a new snapshot.
async fn mutate<T, F>(slot: Arc<AuditSlot>, expected_version: Option<u64>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> crate::Result<T> + Send + 'static,
{
    let mut guard = slot.writer.clone().lock_owned().await;
    let handle = tokio::task::spawn_blocking(move || {
        if let Some(expected) = expected_version {
            let actual = guard.version();
            if expected != actual {
                return Err(ServiceError::VersionConflict { expected, actual });
            }
        }
        let out = f(&mut guard)?;
        *slot.snapshot.write().expect("snapshot lock") = Snapshot::of(&guard);
        Ok(out)
    });
    handle
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
pub struct RoundInput {
    pub draws: u64,
    pub winner: u64,
    pub loser: u64,
    #[serde(default)]
    pub irrelevant: u64,
    /// Relevant ballots in draw order, for the selection-ordered rules.
    #[serde(default)]
    pub sequence: Option<Vec<Mark>>,
    /// Audit version the client last saw; a mismatch is a conflict.
    #[serde(default)]
    pub expected_version: Option<u64>,
    #[serde(default)]
    pub amend: bool,
}

impl RoundInput {
    pub fn observation(&self) -> RoundObservation {
        RoundObservation {
            draws: self.draws,
            winner_relevant: self.winner,
            loser_relevant: self.loser,
            irrelevant: self.irrelevant,
            sequence: self.sequence.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct RoundResponse {
    schema_version: u32,
    audit_id: String,
    version: u64,
    evaluation: StoppingEvaluation,
    amended: bool,
    audit: SessionDocument,
}

async fn post_round(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<RoundInput>, JsonRejection>,
) -> ApiResult<Json<RoundResponse>> {
    let Json(input) = body?;
    let slot = app.audit(&id)?;
    let obs = input.observation();
    let amend = input.amend;
    let outcome = mutate(slot.clone(), input.expected_version, move |s| {
        s.record_round(obs, amend)
    })
    .await?;
    let snap = slot.snapshot();
    Ok(Json(RoundResponse {
        schema_version: SCHEMA_VERSION,
        audit_id: id,
        version: snap.document.version,
        evaluation: round_evaluation(&outcome.evaluation),
        amended: outcome.amended,
        audit: snap.document.clone(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ScheduleAmendInput {
    pub sizes: Vec<u64>,
    pub reason: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

async fn post_schedule(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ScheduleAmendInput>, JsonRejection>,
) -> ApiResult<Json<SessionDocument>> {
    let Json(input) = body?;
    let slot = app.audit(&id)?;
    mutate(slot.clone(), input.expected_version, move |s| {
        s.amend_schedule(input.sizes, input.reason)
    })
    .await?;
    Ok(Json(slot.snapshot().document.clone()))
}

#[derive(Debug, Default, Deserialize)]
pub struct EscalateInput {
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

async fn escalate(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<EscalateInput>>,
) -> ApiResult<Json<SessionDocument>> {
    let input = body.map(|Json(b)| b).unwrap_or_default();
    let slot = app.audit(&id)?;
    mutate(slot.clone(), input.expected_version, move |s| {
        s.escalate(input.reason)
    })
    .await?;
    Ok(Json(slot.snapshot().document.clone()))
}

#[derive(Debug, Deserialize)]
pub struct NextRoundQuery {
    pub target: f64,
}

#[derive(Debug, Serialize)]
struct NextRoundResponse {
    schema_version: u32,
    audit_id: String,
    version: u64,
    plan: PlannerResult,
}

pub fn round_plan(mut p: PlannerResult) -> PlannerResult {
    p.achieved_stop_prob = sig12(p.achieved_stop_prob);
    p
}

pub fn round_whatif(w: WhatIf) -> WhatIf {
    WhatIf {
        stop_prob: sig12(w.stop_prob),
        risk: sig12(w.risk),
        ..w
    }
}

fn require_running(snap: &Snapshot) -> ApiResult<()> {
    if snap.state.status.accepts_rounds()
        || snap.state.status == r2audit_core::AuditStatus::ScheduleExhausted
    {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::CONFLICT,
            "invalid_state",
            format!("audit is {:?}", snap.state.status),
        ))
    }
}

async fn next_round(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<NextRoundQuery>, QueryRejection>,
) -> ApiResult<Json<NextRoundResponse>> {
    let Query(q) = query?;
    let snap = app.audit(&id)?.snapshot();
    require_running(&snap)?;
    let opts = app.planner;
    let s = snap.clone();
    let plan = tokio::task::spawn_blocking(move || {
        next_round_size(
            q.target,
            Some(s.state.distribution()),
            &s.state.config,
            Some(&s.contest),
            &opts,
        )
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(NextRoundResponse {
        schema_version: SCHEMA_VERSION,
        audit_id: id,
        version: snap.document.version,
        plan: round_plan(plan),
    }))
}

#[derive(Debug, Deserialize)]
pub struct WhatIfQuery {
    pub n: u64,
}

#[derive(Debug, Serialize)]
struct WhatIfResponse {
    schema_version: u32,
    audit_id: String,
    version: u64,
    whatif: WhatIf,
}

async fn get_whatif(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<WhatIfQuery>, QueryRejection>,
) -> ApiResult<Json<WhatIfResponse>> {
    let Query(q) = query?;
    let snap = app.audit(&id)?.snapshot();
    require_running(&snap)?;
    let s = snap.clone();
    let w = tokio::task::spawn_blocking(move || {
        whatif(q.n, Some(s.state.distribution()), &s.state.config)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(WhatIfResponse {
        schema_version: SCHEMA_VERSION,
        audit_id: id,
        version: snap.document.version,
        whatif: round_whatif(w),
    }))
}

/// Serve until the process is stopped.
pub async fn serve(addr: &str, state: AppState) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
