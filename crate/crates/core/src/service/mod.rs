//! Session-oriented HTTP API: JSON commands and a server-sent event stream
//! carrying one event per message-log entry.

mod error;
mod store;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, PoisonError};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::agency::{Engine, Info, LogEntry, Payload, ProposalRecord, SessionStatus, StageFailure};
use crate::casebase::{CaseBase, CaseProfile, Component, SharedCaseBase};
use crate::domain::DomainPack;
use crate::memory::FindingValue;
use crate::ontology::{ConceptDoc, OntologyGraph, Relation};
use crate::stage::StageKind;

pub use error::ApiError;
pub use store::{Session, SessionHandle, SessionStore, StoreError};

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Journal directory; sessions found there are resumed at startup.
    pub data_dir: Option<PathBuf>,
    /// Use wall-clock session time instead of the logical clock.
    pub wall_clock: bool,
}

/// Shared state behind every endpoint.
pub struct AppState {
    engines: BTreeMap<String, Engine>,
    ontologies: BTreeMap<String, OntologyGraph>,
    cases: SharedCaseBase,
    sessions: SessionStore,
}

impl AppState {
    /// Installs `packs` over one case base and resumes journaled sessions.
    pub fn new(packs: Vec<DomainPack>, cases: SharedCaseBase, config: &ServiceConfig) -> Result<Self, StoreError> {
        let engines: BTreeMap<String, Engine> = packs
            .into_iter()
            .map(|pack| {
                let engine = Engine::new(Arc::new(pack)).with_cases(cases.clone());
                (engine.pack.id().to_string(), engine)
            })
            .collect();
        let ontologies = engines
            .iter()
            .map(|(id, engine)| (id.clone(), engine.pack.ontology.extrapolated()))
            .collect();
        let sessions = match &config.data_dir {
            Some(dir) => SessionStore::open(dir, &engines, config.wall_clock)?,
            None => SessionStore::in_memory(config.wall_clock),
        };
        Ok(AppState {
            engines,
            ontologies,
            cases,
            sessions,
        })
    }

    /// Built-in pack, in-memory case base, no journal, logical clock.
    pub fn builtin() -> Self {
        AppState::new(
            vec![DomainPack::builtin()],
            CaseBase::in_memory().shared(),
            &ServiceConfig::default(),
        )
        .expect("in-memory state")
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    pub fn cases(&self) -> &SharedCaseBase {
        &self.cases
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions.get(id).ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Lets every open session act on elapsed time; returns the number of
    /// entries logged.
    pub fn tick_all(&self) -> usize {
        let mut logged = 0;
        for handle in self.sessions.handles() {
            let mut session = handle.lock().unwrap_or_else(PoisonError::into_inner);
            if session.supervisor.state().is_closed() {
                continue;
            }
            match session.supervisor.tick() {
                Ok(entries) => {
                    logged += entries.len();
                    session.publish(&entries);
                }
                Err(e) => tracing::warn!(session = %session.id, error = %e, "tick failed"),
            }
        }
        logged
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_snapshot))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/answers", post(submit_answer))
        .route("/sessions/{id}/validate", post(validate_proposal))
        .route("/sessions/{id}/reject", post(reject_proposal))
        .route("/cases", get(query_cases))
        .route("/ontology/{pack}/concepts/{id}", get(ontology_concept))
        .with_state(state)
}

/// Serves until the process is stopped, ticking sessions every `tick`.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, tick: Duration) -> std::io::Result<()> {
    let ticker = state.clone();
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        loop {
            interval.tick().await;
            let state = ticker.clone();
            let _ = tokio::task::spawn_blocking(move || state.tick_all()).await;
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Accepts `"present"`, `"positive:shigella"` or the serialized form
/// `{"positive": "shigella"}`.
fn parse_value(value: &Value) -> Result<FindingValue, ApiError> {
    match value {
        Value::String(text) => Ok(text.parse()?),
        other => serde_json::from_value(other.clone()).map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_value", e.to_string())
                .with_detail(json!({ "value": other }))
        }),
    }
}

#[derive(Deserialize)]
struct CreateSession {
    pack: String,
    #[serde(default)]
    findings: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct CommandResult {
    session: String,
    status: SessionStatus,
    events: Vec<LogEntry>,
}

fn command_result(session: &Session, events: Vec<LogEntry>) -> Json<CommandResult> {
    session.publish(&events);
    Json(CommandResult {
        session: session.id.clone(),
        status: session.supervisor.status(),
        events,
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<CommandResult>), ApiError> {
    let engine = state
        .engines
        .get(&body.pack)
        .ok_or_else(|| ApiError::unknown_pack(&body.pack))?;
    let findings = body
        .findings
        .iter()
        .map(|(sign, value)| Ok((sign.clone(), parse_value(value)?)))
        .collect::<Result<Vec<_>, ApiError>>()?;
    let handle = state
        .sessions
        .create(engine)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut session = handle.lock().unwrap_or_else(PoisonError::into_inner);
    match session.supervisor.start(findings) {
        Ok(events) => Ok((StatusCode::CREATED, command_result(&session, events))),
        Err(e) => {
            let id = session.id.clone();
            drop(session);
            state.sessions.discard(&id);
            Err(e.into())
        }
    }
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<Value>> {
    let sessions = state
        .sessions
        .handles()
        .into_iter()
        .map(|handle| {
            let session = handle.lock().unwrap_or_else(PoisonError::into_inner);
            json!({ "id": session.id, "pack": session.pack, "status": session.supervisor.status() })
        })
        .collect();
    Json(sessions)
}

#[derive(Serialize)]
struct PendingProposal<'a> {
    agent: &'a str,
    #[serde(flatten)]
    proposal: &'a crate::agency::Proposal,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    id: &'a str,
    pack: &'a str,
    status: SessionStatus,
    stage: Option<StageKind>,
    general_state: Option<&'a str>,
    findings: &'a BTreeMap<String, FindingValue>,
    pending_questions: Vec<&'a str>,
    stage_results: &'a BTreeMap<StageKind, String>,
    pending_proposals: Vec<PendingProposal<'a>>,
    components: &'a BTreeMap<StageKind, Component>,
    failure: Option<&'a StageFailure>,
    case_id: Option<&'a str>,
    memory_version: u64,
    next_seq: u64,
}

async fn session_snapshot(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.lock().unwrap_or_else(PoisonError::into_inner);
    let s = session.supervisor.state();
    let snapshot = Snapshot {
        id: &session.id,
        pack: &session.pack,
        status: s.status(),
        stage: s.current_stage(),
        general_state: s.general_state.as_deref(),
        findings: s.memory.findings(),
        pending_questions: s.memory.pending_questions().iter().map(String::as_str).collect(),
        stage_results: s.memory.stage_results(),
        pending_proposals: s
            .pending_proposals()
            .map(|p: &ProposalRecord| PendingProposal {
                agent: &p.agent,
                proposal: &p.proposal,
            })
            .collect(),
        components: &s.components,
        failure: s.failure.as_ref(),
        case_id: s.case_id.as_deref(),
        memory_version: s.memory.version(),
        next_seq: s.next_seq,
    };
    Ok(Json(serde_json::to_value(snapshot).expect("snapshot serializes")))
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

/// True for the entry that closes a session.
fn closes_session(entry: &LogEntry) -> bool {
    matches!(
        entry.content,
        Payload::Inform {
            info: Info::Completed { .. } | Info::StageFailed { .. }
        }
    )
}

fn to_event(entry: &LogEntry) -> Event {
    Event::default()
        .id(entry.seq.to_string())
        .event(entry.performative.to_string())
        .data(entry.to_line())
}

/// Streams the log from `from` (or after `Last-Event-ID`), then live entries.
/// The stream ends after the entry that closes the session; a subscriber
/// that falls too far behind is disconnected and should reconnect with
/// `from`.
async fn session_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let from = match query.from {
        Some(from) => from,
        None => match headers.get("last-event-id") {
            Some(value) => value
                .to_str()
                .ok()
                .and_then(|v| v.parse::<u64>().ok())
                .map(|seq| seq + 1)
                .ok_or_else(|| ApiError::bad_request("Last-Event-ID is not a sequence number"))?,
            None => 0,
        },
    };
    let handle = state.session(&id)?;
    let (receiver, backlog, closed) = {
        let session = handle.lock().unwrap_or_else(PoisonError::into_inner);
        let receiver = session.events.subscribe();
        let log = session.supervisor.log();
        let start = (from as usize).min(log.len());
        (receiver, log[start..].to_vec(), session.supervisor.state().is_closed())
    };
    let next = backlog.last().map_or(from, |e| e.seq + 1);
    let backlog = stream::iter(backlog.into_iter().map(|e| Ok(to_event(&e))));
    let live = stream::unfold((receiver, next, closed), |(mut receiver, next, done)| async move {
        if done {
            return None;
        }
        loop {
            match receiver.recv().await {
                Ok(entry) if entry.seq < next => continue,
                Ok(entry) => {
                    let done = closes_session(&entry);
                    return Some((Ok(to_event(&entry)), (receiver, entry.seq + 1, done)));
                }
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(backlog.chain(live)).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct Answer {
    sign: String,
    value: Value,
}

async fn submit_answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Answer>,
) -> Result<Json<CommandResult>, ApiError> {
    let value = parse_value(&body.value)?;
    let handle = state.session(&id)?;
    let mut session = handle.lock().unwrap_or_else(PoisonError::into_inner);
    let events = session.supervisor.answer(&body.sign, value)?;
    Ok(command_result(&session, events))
}

#[derive(Deserialize)]
struct Decision {
    proposal_id: String,
    #[serde(default)]
    note: Option<String>,
}

async fn validate_proposal(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Decision>,
) -> Result<Json<CommandResult>, ApiError> {
    let handle = state.session(&id)?;
    let mut session = handle.lock().unwrap_or_else(PoisonError::into_inner);
    let events = session.supervisor.validate(&body.proposal_id)?;
    Ok(command_result(&session, events))
}

async fn reject_proposal(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Decision>,
) -> Result<Json<CommandResult>, ApiError> {
    let handle = state.session(&id)?;
    let mut session = handle.lock().unwrap_or_else(PoisonError::into_inner);
    let events = session.supervisor.reject(&body.proposal_id, body.note)?;
    Ok(command_result(&session, events))
}

#[derive(Deserialize)]
struct CasesQuery {
    /// Comma-separated `SIGN=value` pairs.
    #[serde(default)]
    query: Option<String>,
    /// Use the findings of this session as the query.
    #[serde(default)]
    session: Option<String>,
    /// Comma-separated problem keywords; defaults to the pack keywords.
    #[serde(default)]
    keywords: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    5
}

#[derive(Serialize)]
struct RankedCase {
    case_id: String,
    score: f64,
    result: String,
    pb_keywords: Vec<String>,
    components: BTreeMap<StageKind, Component>,
    retained_at: String,
}

fn parse_query(text: &str) -> Result<BTreeMap<String, FindingValue>, ApiError> {
    text.split(',')
        .map(str::trim)
        .filter(|pair| !pair.is_empty())
        .map(|pair| {
            let (sign, value) = pair
                .split_once('=')
                .ok_or_else(|| ApiError::bad_request(format!("query item `{pair}` is not SIGN=value")))?;
            Ok((sign.trim().to_string(), value.parse()?))
        })
        .collect()
}

async fn query_cases(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CasesQuery>,
) -> Result<Json<Vec<RankedCase>>, ApiError> {
    if q.k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let engine = state
        .engines
        .values()
        .next()
        .ok_or_else(|| ApiError::internal("no pack installed"))?;
    let mut findings = match &q.query {
        Some(text) => parse_query(text)?,
        None => BTreeMap::new(),
    };
    let mut keywords: Vec<String> = match &q.keywords {
        Some(text) => text
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_string)
            .collect(),
        None => engine.pack.manifest.keywords.clone(),
    };
    if let Some(id) = &q.session {
        let handle = state.session(id)?;
        let session = handle.lock().unwrap_or_else(PoisonError::into_inner);
        findings.extend(session.supervisor.state().memory.known_findings());
        if q.keywords.is_none() {
            if let Some(engine) = state.engines.get(&session.pack) {
                keywords = engine.pack.manifest.keywords.clone();
            }
        }
    }
    let profile = CaseProfile::new(findings, keywords);
    let base = state.cases.read().unwrap_or_else(PoisonError::into_inner);
    let ranked = base
        .retrieve(&profile, q.k, &engine.config.weights)
        .into_iter()
        .map(|(case, score)| RankedCase {
            case_id: case.id.clone(),
            score,
            result: case.result.clone(),
            pb_keywords: case.pb_keywords.iter().cloned().collect(),
            components: case.components.clone(),
            retained_at: case.retained_at.clone(),
        })
        .collect();
    Ok(Json(ranked))
}

#[derive(Serialize)]
struct ConceptView<'a> {
    concept: ConceptDoc,
    ancestors: Vec<String>,
    relations: Vec<&'a Relation>,
}

async fn ontology_concept(
    State(state): State<Arc<AppState>>,
    Path((pack, id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let graph = state
        .ontologies
        .get(&pack)
        .ok_or_else(|| ApiError::unknown_pack(&pack))?;
    let concept = graph.concept(&id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_concept",
            format!("no concept `{id}` in pack `{pack}`"),
        )
        .with_detail(json!({ "pack": pack, "concept": id }))
    })?;
    let ancestors = graph
        .isa_ancestors(&id)
        .map_err(|e| ApiError::internal(e.to_string()))?
        .into_iter()
        .map(|c| c.to_string())
        .collect();
    let view = ConceptView {
        concept: ConceptDoc::from(concept),
        ancestors,
        relations: graph.relations_of(&id).collect(),
    };
    Ok(Json(serde_json::to_value(view).expect("concept serializes")))
}
