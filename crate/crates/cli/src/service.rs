//! JSON-over-HTTP session API for the interactive loop.
//!
//! Each session has one owner: a step runs on a copy of the committed
//! session in a blocking task and is committed (log appended, snapshot
//! swapped) when it finishes. Reads always see the last committed snapshot.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use anyhow::Context;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use s4_core::corpus::{Dataset, DatasetSchema, OracleRuleSet, Record};
use s4_core::evidence::{EvidenceSet, EvidenceTemplate};
use s4_core::s4::{Answer, FalQuery, InteractiveOracle, Oracle, S4Config, S4Session, ScriptedOracle, SessionEvent, SessionMetrics, Status};

use crate::commands::{advance, write_metrics_csv};
use crate::store::{SessionDir, SessionSpec, SessionStore};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

fn core_status(e: &s4_core::Error) -> StatusCode {
    use s4_core::Error as E;
    match e {
        E::UnknownQuery(_) => StatusCode::NOT_FOUND,
        E::AlreadyAnswered(_) | E::NotAwaiting | E::AwaitingAnswer(_) | E::BudgetExhausted(_) => StatusCode::CONFLICT,
        E::UnknownLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
        e if e.is_config_error() || e.is_data_error() => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<s4_core::Error> for ApiError {
    fn from(e: s4_core::Error) -> Self {
        ApiError::new(core_status(&e), e.to_string())
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        let status = e.downcast_ref::<s4_core::Error>().map_or(StatusCode::INTERNAL_SERVER_ERROR, core_status);
        ApiError::new(status, format!("{e:#}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Entry {
    dir: SessionDir,
    spec: SessionSpec,
    dataset: Arc<Dataset>,
    state: Mutex<EntryState>,
}

struct EntryState {
    session: S4Session,
    busy: bool,
    error: Option<String>,
}

/// A session directory that failed to load; reported, never served.
struct Broken {
    error: String,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: SessionStore,
    sessions: RwLock<BTreeMap<String, Arc<Entry>>>,
    broken: RwLock<BTreeMap<String, Broken>>,
}

impl AppState {
    /// Opens the store and restores every session by replaying its log.
    /// Sessions that fail to restore are refused; the others still load.
    pub fn load(root: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let store = SessionStore::open(root)?;
        let mut sessions = BTreeMap::new();
        let mut broken = BTreeMap::new();
        for id in store.ids()? {
            let Some(dir) = store.dir(&id) else {
                warn!("skipping {id}: no session spec");
                broken.insert(id, Broken { error: "missing session spec".into() });
                continue;
            };
            match dir.restore() {
                Ok((spec, dataset, session)) => {
                    info!("restored session {id} ({} events)", session.events().len());
                    sessions.insert(
                        id,
                        Arc::new(Entry {
                            dir,
                            spec,
                            dataset: Arc::new(dataset),
                            state: Mutex::new(EntryState {
                                session,
                                busy: false,
                                error: None,
                            }),
                        }),
                    );
                }
                Err(e) => {
                    error!("refusing to load session {id}: {e:#}");
                    broken.insert(id, Broken { error: format!("{e:#}") });
                }
            }
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                sessions: RwLock::new(sessions),
                broken: RwLock::new(broken),
            }),
        })
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        if let Some(e) = self.inner.sessions.read().unwrap().get(id) {
            return Ok(e.clone());
        }
        if let Some(b) = self.inner.broken.read().unwrap().get(id) {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("session {id} could not be restored: {}", b.error)));
        }
        Err(ApiError::not_found("session"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/query/{qid}/answer", post(answer_query))
        .route("/sessions/{id}/factors", get(get_factors))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/events", get(get_events))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(root: PathBuf, addr: &str) -> anyhow::Result<()> {
    let state = AppState::load(root)?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub config: S4Config,
    #[serde(default)]
    pub seed_evidence: EvidenceSet,
    #[serde(default)]
    pub schema: DatasetSchema,
    /// Server-side JSONL file.
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub records: Option<Vec<Record>>,
    #[serde(default)]
    pub oracle: Option<OracleRuleSet>,
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
    status: Status,
}

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Created>)> {
    let created = tokio::task::spawn_blocking(move || create_blocking(&app, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(created)))
}

fn create_blocking(app: &AppState, req: CreateSession) -> ApiResult<Created> {
    let dataset = match (req.dataset_path, req.records) {
        (Some(p), None) => s4_core::corpus::load_dataset(&p, &req.schema)?,
        (None, Some(records)) => Dataset::from_records(records, &req.schema)?,
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give exactly one of dataset_path or records")),
    };
    let session = S4Session::new(req.config.clone(), req.seed_evidence.clone(), &dataset)?;
    let spec = SessionSpec {
        id: String::new(),
        config: req.config,
        seed_evidence: req.seed_evidence,
        schema: req.schema,
        oracle: req.oracle,
    };
    let dir = app.inner.store.create(spec, &dataset)?;
    let spec = dir.spec()?;
    let id = spec.id.clone();
    let status = session.status();
    info!("created session {id}");
    app.inner.sessions.write().unwrap().insert(
        id.clone(),
        Arc::new(Entry {
            dir,
            spec,
            dataset: Arc::new(dataset),
            state: Mutex::new(EntryState {
                session,
                busy: false,
                error: None,
            }),
        }),
    );
    Ok(Created { id, status })
}

#[derive(Debug, Serialize)]
struct SessionList {
    sessions: Vec<String>,
    unavailable: Vec<String>,
}

async fn list_sessions(State(app): State<AppState>) -> Json<SessionList> {
    Json(SessionList {
        sessions: app.inner.sessions.read().unwrap().keys().cloned().collect(),
        unavailable: app.inner.broken.read().unwrap().keys().cloned().collect(),
    })
}

#[derive(Debug, PartialEq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub status: Status,
    pub busy: bool,
    pub outer: usize,
    pub outer_iterations: usize,
    pub answered: usize,
    pub budget: usize,
    pub evidence_size: usize,
    pub pending_query_id: Option<usize>,
    pub latest_metrics: Option<SessionMetrics>,
    pub scripted_oracle: bool,
    pub error: Option<String>,
}

fn view(entry: &Entry, st: &EntryState) -> SessionView {
    let s = &st.session;
    SessionView {
        id: entry.spec.id.clone(),
        status: s.status(),
        busy: st.busy,
        outer: s.outer(),
        outer_iterations: s.config().outer_iterations,
        answered: s.answered(),
        budget: s.config().budget,
        evidence_size: s.evidence().len(),
        pending_query_id: s.pending_query().map(|q| q.id),
        latest_metrics: s.metrics().pop(),
        scripted_oracle: entry.spec.oracle.is_some(),
        error: st.error.clone(),
    }
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let entry = app.entry(&id)?;
    let st = entry.state.lock().unwrap();
    Ok(Json(view(&entry, &st)))
}

/// Starts advancing the session in the background: to completion with a
/// scripted oracle, otherwise to the next query. Poll `GET /sessions/{id}`.
async fn step_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let entry = app.entry(&id)?;
    let (mut work, accepted) = {
        let mut st = entry.state.lock().unwrap();
        if st.busy {
            return Err(ApiError::new(StatusCode::CONFLICT, "a step is already running"));
        }
        match st.session.status() {
            Status::Done => return Err(ApiError::new(StatusCode::CONFLICT, "session is done")),
            Status::AwaitingAnswer => {
                let q = st.session.pending_query().map(|q| q.id).unwrap_or_default();
                return Err(s4_core::Error::AwaitingAnswer(q).into());
            }
            Status::Running => {}
        }
        st.busy = true;
        st.error = None;
        (st.session.clone(), view(&entry, &st))
    };
    let task_entry = entry.clone();
    tokio::task::spawn_blocking(move || {
        let e = &task_entry;
        let mut oracle: Box<dyn Oracle> = match &e.spec.oracle {
            Some(rules) => Box::new(ScriptedOracle { rules: rules.clone() }),
            None => Box::new(InteractiveOracle),
        };
        let committed = work.events().len();
        let result = advance(&mut work, &e.dataset, oracle.as_mut(), |_| Ok(()))
            .and_then(|_| e.dir.append_events(&work.events()[committed..]));
        let mut st = e.state.lock().unwrap();
        st.busy = false;
        match result {
            Ok(()) => st.session = work,
            Err(err) => {
                error!("session {}: step failed: {err:#}", e.spec.id);
                st.error = Some(format!("{err:#}"));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

#[derive(Debug, Serialize)]
struct QueryView {
    status: Status,
    query: Option<FalQuery>,
}

async fn get_query(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<QueryView>> {
    let entry = app.entry(&id)?;
    let st = entry.state.lock().unwrap();
    Ok(Json(QueryView {
        status: st.session.status(),
        query: st.session.pending_query().cloned(),
    }))
}

#[derive(Debug, Serialize)]
struct Answered {
    query_id: usize,
    outcome: s4_core::s4::Outcome,
    status: Status,
    answered: usize,
    evidence_size: usize,
}

async fn answer_query(
    State(app): State<AppState>,
    Path((id, qid)): Path<(String, usize)>,
    Json(answer): Json<Answer>,
) -> ApiResult<Json<Answered>> {
    let entry = app.entry(&id)?;
    let mut st = entry.state.lock().unwrap();
    if st.busy {
        return Err(ApiError::new(StatusCode::CONFLICT, "a step is running"));
    }
    let mut next = st.session.clone();
    let committed = next.events().len();
    next.answer(qid, answer, &entry.dataset)?;
    entry.dir.append_events(&next.events()[committed..])?;
    st.session = next;
    let s = &st.session;
    Ok(Json(Answered {
        query_id: qid,
        outcome: s.queries()[qid].outcome.clone(),
        status: s.status(),
        answered: s.answered(),
        evidence_size: s.evidence().len(),
    }))
}

#[derive(Debug, Serialize)]
struct FactorView {
    id: usize,
    #[serde(flatten)]
    template: EvidenceTemplate,
}

#[derive(Debug, Serialize)]
struct Factors {
    factors: Vec<FactorView>,
}

async fn get_factors(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Factors>> {
    let entry = app.entry(&id)?;
    let st = entry.state.lock().unwrap();
    let factors = st
        .session
        .evidence()
        .iter()
        .enumerate()
        .map(|(id, t)| FactorView { id, template: t.clone() })
        .collect();
    Ok(Json(Factors { factors }))
}

#[derive(Debug, Deserialize)]
struct MetricsParams {
    #[serde(default)]
    format: Option<String>,
}

async fn get_metrics(State(app): State<AppState>, Path(id): Path<String>, Query(p): Query<MetricsParams>) -> ApiResult<Response> {
    let entry = app.entry(&id)?;
    let metrics = entry.state.lock().unwrap().session.metrics();
    match p.format.as_deref() {
        None | Some("json") => Ok(Json(json!({ "metrics": metrics })).into_response()),
        Some("csv") => {
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, &metrics)?;
            Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response())
        }
        Some(f) => Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown format `{f}`"))),
    }
}

#[derive(Debug, Serialize)]
struct Events<'a> {
    events: &'a [SessionEvent],
}

async fn get_events(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = app.entry(&id)?;
    let st = entry.state.lock().unwrap();
    Ok(Json(Events { events: st.session.events() }).into_response())
}
