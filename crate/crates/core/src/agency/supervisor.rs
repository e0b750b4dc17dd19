use std::collections::BTreeSet;
use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{SecondsFormat, Utc};

use super::agents::{
    ontology_knowledge, pack_knowledge, Agent, AgentContext, AutomatonAgent, CaseBasedAgent, EpidemiologyAgent,
    CASEBASE_KNOWLEDGE,
};
use super::descriptor::{
    evaluate_capability, CapabilityAnswer, DescriptorError, Goal, KnowledgeModel, Task, DEFAULT_ACCEPTANCE_THRESHOLD,
    DEFAULT_DEADLINE_MS,
};
use super::message::{
    AbandonReason, Draft, Info, LogEntry, Payload, Performative, ProposalOrigin, StageFailure, BROADCAST, SUPERVISOR,
    USER,
};
use super::state::{
    proposal_id, session_replay, task_id, AbandonCheck, AssignmentStatus, ProposalStatus, ReplayError, SessionStatus,
    SupervisorState,
};
use crate::automaton::{AutomatonError, StepOutcome, TraceStep};
use crate::casebase::{
    Case, CaseBaseError, Environment, Revision, SharedCaseBase, SimilarityWeights, DEFAULT_SUGGESTION_THRESHOLD,
};
use crate::domain::DomainPack;
use crate::memory::{FindingValue, SignKind};
use crate::ontology::{OntologyAgent, OntologyAgents};
use crate::stage::StageKind;

pub const DEFAULT_MAX_ROUNDS: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum AgencyError {
    #[error("no registered agent accepts the {0} task")]
    NoCompetentAgent(StageKind),
    #[error("unknown sign `{0}`")]
    UnknownSign(String),
    #[error("value `{value}` does not fit {kind:?} sign `{sign}`")]
    InvalidValue {
        sign: String,
        value: FindingValue,
        kind: SignKind,
    },
    #[error("unknown or no longer pending proposal `{0}`")]
    UnknownProposal(String),
    #[error("session is {0:?}")]
    SessionClosed(SessionStatus),
    #[error("session already started")]
    AlreadyStarted,
    #[error("session not started")]
    NotStarted,
    #[error("agent registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("general automaton: {0}")]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("message journal: {0}")]
    Journal(#[from] io::Error),
    #[error("no quiescence after {0} scheduling rounds")]
    RoundLimit(usize),
    #[error("case base: {0}")]
    CaseBase(#[from] CaseBaseError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheduler {
    /// Agents act one after another on the calling thread.
    #[default]
    Cooperative,
    /// Agents of a round act on separate threads.
    Threaded,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub acceptance_threshold: f64,
    pub deadline_ms: u64,
    pub suggestion_threshold: f64,
    pub weights: SimilarityWeights,
    pub max_rounds: usize,
    pub scheduler: Scheduler,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            acceptance_threshold: DEFAULT_ACCEPTANCE_THRESHOLD,
            deadline_ms: DEFAULT_DEADLINE_MS,
            suggestion_threshold: DEFAULT_SUGGESTION_THRESHOLD,
            weights: SimilarityWeights::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            scheduler: Scheduler::Cooperative,
        }
    }
}

/// Process-wide resources shared by sessions of one knowledge pack.
#[derive(Clone)]
pub struct Engine {
    pub pack: Arc<DomainPack>,
    pub ontology_agents: Arc<OntologyAgents>,
    pub cases: Option<SharedCaseBase>,
    pub config: EngineConfig,
}

impl Engine {
    pub fn new(pack: Arc<DomainPack>) -> Self {
        Engine {
            pack,
            ontology_agents: Arc::new(OntologyAgents::new()),
            cases: None,
            config: EngineConfig::default(),
        }
    }

    pub fn with_cases(mut self, cases: SharedCaseBase) -> Self {
        if let Ok(mut base) = cases.write() {
            base.set_sign_categories(self.pack.sign_categories());
        }
        self.cases = Some(cases);
        self
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    /// Knowledge bases agents may rely on.
    pub fn knowledge_bases(&self) -> BTreeSet<String> {
        let mut kbs = BTreeSet::from([pack_knowledge(self.pack.id()), ontology_knowledge(self.pack.id())]);
        if self.cases.is_some() {
            kbs.insert(CASEBASE_KNOWLEDGE.to_string());
        }
        kbs
    }

    /// One automaton agent per clinical stage, the case-based agent and the
    /// epidemiology agent.
    pub fn standard_agents(&self) -> Vec<Arc<dyn Agent>> {
        let mut agents: Vec<Arc<dyn Agent>> = StageKind::CLINICAL
            .iter()
            .filter_map(|stage| AutomatonAgent::new(&self.pack, *stage, 0.9))
            .map(|a| Arc::new(a) as Arc<dyn Agent>)
            .collect();
        let cases = self
            .cases
            .clone()
            .unwrap_or_else(|| crate::casebase::CaseBase::in_memory().shared());
        agents.push(Arc::new(CaseBasedAgent::new(
            &self.pack,
            cases,
            self.config.weights.clone(),
            self.config.suggestion_threshold,
            0.6,
        )));
        agents.push(Arc::new(EpidemiologyAgent::new(&self.pack, 0.5)));
        agents
    }

    pub fn supervisor(&self) -> Supervisor {
        Supervisor::new(self.clone(), self.standard_agents()).expect("standard agents are valid")
    }

    fn ontology_for(&self, stage: StageKind) -> Arc<OntologyAgent> {
        self.ontology_agents
            .get_or_create(stage, self.pack.domain(), &self.pack.ontology)
    }
}

/// Broadcasts `task` to `agents` and collects exactly one answer from each.
pub fn announce_task(
    task: &Task,
    agents: &[Arc<dyn Agent>],
    knowledge: &BTreeSet<String>,
    threshold: f64,
) -> Result<Vec<(String, CapabilityAnswer)>, AgencyError> {
    let answers: Vec<(String, CapabilityAnswer)> = agents
        .iter()
        .map(|a| {
            let d = a.descriptor();
            (d.id.clone(), evaluate_capability(d, task, knowledge, threshold))
        })
        .collect();
    if answers.iter().any(|(_, a)| *a == CapabilityAnswer::Accept) {
        Ok(answers)
    } else {
        Err(AgencyError::NoCompetentAgent(task.stage))
    }
}

/// Session time source.
#[derive(Clone, Debug)]
pub enum Clock {
    /// Advances one millisecond per scheduling round that logs something;
    /// fully reproducible.
    Logical {
        now: u64,
    },
    Wall {
        origin: Instant,
    },
}

impl Clock {
    pub fn logical() -> Self {
        Clock::Logical { now: 0 }
    }

    pub fn wall() -> Self {
        Clock::Wall { origin: Instant::now() }
    }

    /// Wall clock continuing a session that has already run `elapsed_ms`.
    pub fn wall_resumed(elapsed_ms: u64) -> Self {
        let origin = Instant::now()
            .checked_sub(Duration::from_millis(elapsed_ms))
            .unwrap_or_else(Instant::now);
        Clock::Wall { origin }
    }

    pub fn now(&self) -> u64 {
        match self {
            Clock::Logical { now } => *now,
            Clock::Wall { origin } => origin.elapsed().as_millis() as u64,
        }
    }

    fn tick(&mut self) {
        if let Clock::Logical { now } = self {
            *now += 1;
        }
    }

    fn untick(&mut self) {
        if let Clock::Logical { now } = self {
            *now -= 1;
        }
    }

    /// Moves a logical clock forward; wall clocks ignore this.
    pub fn advance(&mut self, ms: u64) {
        if let Clock::Logical { now } = self {
            *now += ms;
        }
    }
}

pub type Journal = Box<dyn FnMut(&LogEntry) -> io::Result<()> + Send>;

/// The single supervisor of one session: owns the working memory and the
/// general automaton, schedules agents and writes the message log.
pub struct Supervisor {
    engine: Engine,
    agents: Vec<Arc<dyn Agent>>,
    knowledge: BTreeSet<String>,
    state: SupervisorState,
    log: Vec<LogEntry>,
    clock: Clock,
    journal: Option<Journal>,
}

impl Supervisor {
    pub fn new(engine: Engine, agents: Vec<Arc<dyn Agent>>) -> Result<Self, AgencyError> {
        let mut ids = BTreeSet::new();
        let mut ontological = BTreeSet::new();
        for agent in &agents {
            let d = agent.descriptor();
            d.validate()?;
            if [SUPERVISOR, USER, BROADCAST].contains(&d.id.as_str()) || !ids.insert(d.id.clone()) {
                return Err(AgencyError::Registry(format!(
                    "agent id `{}` is reserved or taken",
                    d.id
                )));
            }
            if d.knowledge_model == KnowledgeModel::Ontological {
                for stage in &d.stage_competencies {
                    if !ontological.insert((*stage, d.domain().map(str::to_string))) {
                        return Err(AgencyError::Registry(format!(
                            "second ontological agent for stage {stage}"
                        )));
                    }
                }
            }
        }
        let knowledge = engine.knowledge_bases();
        Ok(Supervisor {
            engine,
            agents,
            knowledge,
            state: SupervisorState::new(),
            log: Vec::new(),
            clock: Clock::logical(),
            journal: None,
        })
    }

    /// Rebuilds a session from its message log. The clock resumes at the
    /// last logged time.
    pub fn resume(
        engine: Engine,
        agents: Vec<Arc<dyn Agent>>,
        log: Vec<LogEntry>,
        wall_clock: bool,
    ) -> Result<Self, AgencyError> {
        let mut supervisor = Supervisor::new(engine, agents)?;
        supervisor.state = session_replay(&log)?;
        let last = supervisor.state.last_timestamp;
        supervisor.clock = if wall_clock {
            Clock::wall_resumed(last)
        } else {
            Clock::Logical { now: last }
        };
        if let Some(stage) = supervisor.state.current_stage() {
            supervisor.engine.ontology_for(stage);
        }
        supervisor.log = log;
        Ok(supervisor)
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Called with every entry before it is acknowledged.
    pub fn with_journal(mut self, journal: Journal) -> Self {
        self.journal = Some(journal);
        self
    }

    pub fn state(&self) -> &SupervisorState {
        &self.state
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn status(&self) -> SessionStatus {
        self.state.status()
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn clock_mut(&mut self) -> &mut Clock {
        &mut self.clock
    }

    pub fn agents(&self) -> &[Arc<dyn Agent>] {
        &self.agents
    }

    /// Enters the first stage, records the initial findings and runs the
    /// agents until they wait for the user. Returns the new log entries.
    pub fn start(
        &mut self,
        findings: impl IntoIterator<Item = (String, FindingValue)>,
    ) -> Result<Vec<LogEntry>, AgencyError> {
        if self.state.general_state.is_some() || !self.log.is_empty() {
            return Err(AgencyError::AlreadyStarted);
        }
        let findings: Vec<(String, FindingValue)> = findings.into_iter().collect();
        for (sign, value) in &findings {
            self.check_finding(sign, value)?;
        }
        let before = self.log.len();
        self.advance_general()?;
        for (sign, value) in findings {
            if self.state.is_closed() {
                break;
            }
            self.record_answer(sign, value)?;
        }
        self.drive()?;
        Ok(self.log[before..].to_vec())
    }

    /// Records a user answer or volunteered finding, then resumes the agents.
    pub fn answer(&mut self, sign: &str, value: FindingValue) -> Result<Vec<LogEntry>, AgencyError> {
        self.ensure_open()?;
        self.check_finding(sign, &value)?;
        let before = self.log.len();
        self.record_answer(sign.to_string(), value)?;
        self.drive()?;
        Ok(self.log[before..].to_vec())
    }

    /// Accepts a pending proposal as the stage result, cancels competitors
    /// and moves to the next stage.
    pub fn validate(&mut self, proposal: &str) -> Result<Vec<LogEntry>, AgencyError> {
        self.ensure_open()?;
        let record = self.pending_proposal(proposal)?.clone();
        let before = self.log.len();
        let version = self.state.memory.version() + 1;
        self.emit(
            Performative::Validate,
            USER,
            &record.agent,
            &record.conversation,
            Payload::Validation {
                proposal_id: proposal.to_string(),
                version,
            },
        )?;
        let competitors: Vec<String> = self
            .state
            .task(&record.conversation)
            .map(|t| {
                t.assignments
                    .iter()
                    .filter(|(_, s)| **s == AssignmentStatus::Active)
                    .map(|(id, _)| id.clone())
                    .collect()
            })
            .unwrap_or_default();
        for agent in competitors {
            self.emit(
                Performative::Cancel,
                SUPERVISOR,
                &agent,
                &record.conversation,
                Payload::Cancel {
                    validated: proposal.to_string(),
                },
            )?;
        }
        self.advance_general()?;
        self.drive()?;
        Ok(self.log[before..].to_vec())
    }

    /// Refuses a pending proposal. A refused case-based suggestion leaves a
    /// revision note on its case.
    pub fn reject(&mut self, proposal: &str, note: Option<String>) -> Result<Vec<LogEntry>, AgencyError> {
        self.ensure_open()?;
        let record = self.pending_proposal(proposal)?.clone();
        let before = self.log.len();
        self.emit(
            Performative::Reject,
            USER,
            &record.agent,
            &record.conversation,
            Payload::Rejection {
                proposal_id: proposal.to_string(),
                note: note.clone(),
            },
        )?;
        if let (ProposalOrigin::CaseBased { case_id, .. }, Some(cases)) = (&record.proposal.origin, &self.engine.cases)
        {
            let mut base = cases.write().unwrap_or_else(|p| p.into_inner());
            base.revise(
                case_id,
                Revision {
                    stage: record.proposal.stage,
                    note: note.unwrap_or_else(|| format!("{proposal} rejected")),
                },
            )?;
        }
        self.drive()?;
        Ok(self.log[before..].to_vec())
    }

    /// Gives the agents a chance to act, e.g. after time has passed.
    pub fn tick(&mut self) -> Result<Vec<LogEntry>, AgencyError> {
        if self.state.general_state.is_none() {
            return Err(AgencyError::NotStarted);
        }
        let before = self.log.len();
        if !self.state.is_closed() {
            self.drive()?;
        }
        Ok(self.log[before..].to_vec())
    }

    fn ensure_open(&self) -> Result<(), AgencyError> {
        if self.state.general_state.is_none() {
            return Err(AgencyError::NotStarted);
        }
        if self.state.is_closed() {
            return Err(AgencyError::SessionClosed(self.state.status()));
        }
        Ok(())
    }

    fn pending_proposal(&self, id: &str) -> Result<&super::state::ProposalRecord, AgencyError> {
        let current = self.state.current_task().map(|t| t.task.id.as_str());
        self.state
            .proposal(id)
            .filter(|p| p.status == ProposalStatus::Pending && Some(p.conversation.as_str()) == current)
            .ok_or_else(|| AgencyError::UnknownProposal(id.to_string()))
    }

    fn check_finding(&self, sign: &str, value: &FindingValue) -> Result<(), AgencyError> {
        let kind = self
            .engine
            .pack
            .sign(sign)
            .map(|s| s.kind)
            .ok_or_else(|| AgencyError::UnknownSign(sign.to_string()))?;
        if kind.accepts(value) {
            Ok(())
        } else {
            Err(AgencyError::InvalidValue {
                sign: sign.to_string(),
                value: value.clone(),
                kind,
            })
        }
    }

    fn record_answer(&mut self, sign: String, value: FindingValue) -> Result<(), AgencyError> {
        let conversation = self.conversation()?;
        let version = self.state.memory.version() + 1;
        self.emit(
            Performative::UserResponse,
            USER,
            SUPERVISOR,
            &conversation,
            Payload::Answer { sign, value, version },
        )
    }

    /// Latest conversation, open or not.
    fn conversation(&self) -> Result<String, AgencyError> {
        self.state
            .tasks
            .last()
            .map(|t| t.task.id.clone())
            .ok_or(AgencyError::NotStarted)
    }

    fn emit(
        &mut self,
        performative: Performative,
        sender: &str,
        receiver: &str,
        conversation: &str,
        content: Payload,
    ) -> Result<(), AgencyError> {
        let entry = LogEntry {
            seq: self.state.next_seq,
            timestamp: self.clock.now().max(self.state.last_timestamp),
            performative,
            sender: sender.to_string(),
            receiver: receiver.to_string(),
            conversation: conversation.to_string(),
            content,
        };
        self.state.apply(&entry)?;
        if let Some(journal) = &mut self.journal {
            journal(&entry)?;
        }
        self.log.push(entry);
        Ok(())
    }

    fn fail(&mut self, failure: StageFailure) -> Result<(), AgencyError> {
        let conversation = self.conversation()?;
        self.emit(
            Performative::Inform,
            SUPERVISOR,
            USER,
            &conversation,
            Payload::Inform {
                info: Info::StageFailed { failure },
            },
        )
    }

    /// Steps the general automaton once: announces the next stage or
    /// completes the session.
    fn advance_general(&mut self) -> Result<(), AgencyError> {
        let general = &self.engine.pack.general;
        let from = self
            .state
            .general_state
            .clone()
            .unwrap_or_else(|| general.initial.clone());
        let stuck = StageFailure::GeneralAutomaton { state: from.clone() };
        let (to, transition) = match general.step(&from, &self.state.memory)? {
            StepOutcome::Advanced { to, transition } => (to, transition),
            _ if self.state.tasks.is_empty() => {
                return Err(AgencyError::Automaton(AutomatonError::UnreachableInitial {
                    initial: from,
                }))
            }
            _ => return self.fail(stuck),
        };
        let advance = TraceStep {
            state: from,
            transition,
            to: to.clone(),
        };
        if general.is_terminal(&to) {
            return self.complete(advance);
        }
        match StageKind::from_state_label(&to) {
            Some(stage) if self.engine.pack.automaton(stage).is_some() => self.announce(stage, advance),
            _ if self.state.tasks.is_empty() => Err(AgencyError::Automaton(AutomatonError::UnknownState {
                context: "general automaton stage".into(),
                state: to,
            })),
            _ => self.fail(stuck),
        }
    }

    fn announce(&mut self, stage: StageKind, advance: TraceStep) -> Result<(), AgencyError> {
        let automaton = self.engine.pack.automaton(stage).expect("checked by caller");
        let task = Task {
            id: task_id(self.state.tasks.len()),
            stage,
            goal: Goal::ReachTerminal {
                automaton: automaton.id.clone(),
            },
            deadline_ms: self.engine.config.deadline_ms,
            announced_at: self.clock.now().max(self.state.last_timestamp),
            context_version: self.state.memory.version(),
        };
        self.engine.ontology_for(stage);
        let conversation = task.id.clone();
        let answers = announce_task(
            &task,
            &self.agents,
            &self.knowledge,
            self.engine.config.acceptance_threshold,
        );
        self.emit(
            Performative::Announce,
            SUPERVISOR,
            BROADCAST,
            &conversation,
            Payload::Announce {
                task: task.clone(),
                advance,
            },
        )?;
        let answers = match answers {
            Ok(answers) => answers,
            Err(_) => self
                .agents
                .iter()
                .map(|a| {
                    let d = a.descriptor();
                    let answer =
                        evaluate_capability(d, &task, &self.knowledge, self.engine.config.acceptance_threshold);
                    (d.id.clone(), answer)
                })
                .collect(),
        };
        let any_accept = answers.iter().any(|(_, a)| *a == CapabilityAnswer::Accept);
        for (agent, answer) in answers {
            let performative = match answer {
                CapabilityAnswer::Accept => Performative::AcceptTask,
                CapabilityAnswer::Decline(_) => Performative::DeclineTask,
            };
            self.emit(
                performative,
                &agent,
                SUPERVISOR,
                &conversation,
                Payload::Capability { answer },
            )?;
        }
        if !any_accept {
            self.fail(StageFailure::NoCompetentAgent)?;
        }
        Ok(())
    }

    fn complete(&mut self, advance: TraceStep) -> Result<(), AgencyError> {
        let (case_id, retention_error) = match &self.engine.cases {
            Some(cases) => {
                let mut base = cases.write().unwrap_or_else(|p| p.into_inner());
                let case = self.build_case(base.next_id());
                match base.retain(case) {
                    Ok(id) => (Some(id), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            None => (None, None),
        };
        let conversation = self.conversation()?;
        self.emit(
            Performative::Inform,
            SUPERVISOR,
            USER,
            &conversation,
            Payload::Inform {
                info: Info::Completed {
                    advance,
                    case_id,
                    retention_error,
                },
            },
        )
    }

    /// The case retained when this session completes.
    pub fn build_case(&self, id: String) -> Case {
        let pack = &self.engine.pack;
        let memory = &self.state.memory;
        let antecedents = pack
            .signs
            .iter()
            .filter(|s| s.kind == SignKind::Antecedent && memory.finding(&s.id).is_affirmative())
            .map(|s| s.id.clone())
            .collect();
        let result = self
            .state
            .components
            .values()
            .map(|c| c.value.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Case {
            id,
            pb_keywords: pack.manifest.keywords.iter().cloned().collect(),
            environment: Environment {
                findings: memory.known_findings(),
                antecedents,
            },
            result,
            components: self.state.components.clone(),
            trace: self.state.trace.clone(),
            retained_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            revisions: Vec::new(),
        }
    }

    /// Runs scheduling rounds until one logs nothing, then fails the stage
    /// if nothing is left for the user to do.
    fn drive(&mut self) -> Result<(), AgencyError> {
        for _ in 0..self.engine.config.max_rounds {
            if self.state.is_closed() {
                return Ok(());
            }
            if self.round()? == 0 {
                return self.settle();
            }
        }
        Err(AgencyError::RoundLimit(self.engine.config.max_rounds))
    }

    /// One bulk-synchronous round: abandonment checks, then every live agent
    /// acts on the same snapshot and the drafts are logged in registry order.
    fn round(&mut self) -> Result<usize, AgencyError> {
        self.clock.tick();
        let now = self.clock.now();
        let before = self.log.len();
        let mut abandons = Vec::new();
        let mut work = Vec::new();
        for (index, agent) in self.agents.iter().enumerate() {
            let id = &agent.descriptor().id;
            for record in &self.state.tasks {
                let Some(status) = record.assignments.get(id).filter(|s| s.is_live()) else {
                    continue;
                };
                match self.state.check_abandon(&record.task.id, id, now) {
                    AbandonCheck::Abandon(reason) => abandons.push((id.clone(), record.task.id.clone(), reason)),
                    AbandonCheck::Continue if *status == AssignmentStatus::Active => {
                        work.push((index, record.task.clone()))
                    }
                    AbandonCheck::Continue => {}
                }
            }
        }
        for (agent, conversation, reason) in abandons {
            self.emit(
                Performative::Abandon,
                &agent,
                SUPERVISOR,
                &conversation,
                Payload::Abandon { reason },
            )?;
        }
        let ontologies: Vec<Option<Arc<OntologyAgent>>> = work
            .iter()
            .map(|(_, task)| self.engine.ontology_agents.get(task.stage, self.engine.pack.domain()))
            .collect();
        let drafts = self.collect_drafts(&work, &ontologies, now);
        for ((index, task), drafts) in work.iter().zip(drafts) {
            let agent = self.agents[*index].descriptor().id.clone();
            for draft in drafts {
                self.submit(&agent, &task.id, draft)?;
            }
        }
        let logged = self.log.len() - before;
        if logged == 0 {
            self.clock.untick();
        }
        Ok(logged)
    }

    fn collect_drafts(
        &self,
        work: &[(usize, Task)],
        ontologies: &[Option<Arc<OntologyAgent>>],
        now: u64,
    ) -> Vec<Vec<Draft>> {
        let context = |i: usize| AgentContext {
            task: &work[i].1,
            state: &self.state,
            now,
            ontology: ontologies[i].as_deref(),
        };
        match self.engine.config.scheduler {
            Scheduler::Cooperative => (0..work.len())
                .map(|i| self.agents[work[i].0].act(&context(i)))
                .collect(),
            Scheduler::Threaded => std::thread::scope(|scope| {
                let handles: Vec<_> = (0..work.len())
                    .map(|i| {
                        let agent = &self.agents[work[i].0];
                        let ctx = context(i);
                        scope.spawn(move || agent.act(&ctx))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap_or_default()).collect()
            }),
        }
    }

    /// Logs an agent draft if it is still admissible: duplicates, questions
    /// already asked or answered and messages outside the agent's role are
    /// dropped.
    fn submit(&mut self, agent: &str, conversation: &str, draft: Draft) -> Result<(), AgencyError> {
        let live = self
            .state
            .task(conversation)
            .and_then(|t| t.assignments.get(agent))
            .is_some_and(|s| *s == AssignmentStatus::Active);
        if !live {
            return Ok(());
        }
        let content = match draft.content {
            Payload::Question { sign, .. } => {
                let memory = &self.state.memory;
                if self.engine.pack.sign(&sign).is_none()
                    || memory.is_pending(&sign)
                    || memory.finding(&sign).is_known()
                {
                    return Ok(());
                }
                Payload::Question {
                    sign,
                    version: memory.version() + 1,
                }
            }
            Payload::Proposal { mut proposal } => {
                let Some(task) = self.state.current_task().filter(|t| t.task.id == conversation) else {
                    return Ok(());
                };
                let duplicate = self
                    .state
                    .proposals_by(agent, conversation)
                    .any(|p| p.status == ProposalStatus::Pending && p.proposal.value == proposal.value);
                if proposal.stage != task.task.stage || duplicate {
                    return Ok(());
                }
                proposal.proposal_id = proposal_id(self.state.proposals.len());
                Payload::Proposal { proposal }
            }
            Payload::Inform {
                info: Info::StageFailed { .. } | Info::Completed { .. },
            } => return Ok(()),
            content @ (Payload::Inform { .. } | Payload::Abandon { .. }) => content,
            _ => return Ok(()),
        };
        if !content.fits(draft.performative) {
            return Ok(());
        }
        self.emit(draft.performative, agent, &draft.receiver, conversation, content)
    }

    /// After a quiet round: the stage fails when no live agent is left, or
    /// when no question and no proposal awaits the user.
    fn settle(&mut self) -> Result<(), AgencyError> {
        let Some(record) = self.state.current_task() else {
            return Ok(());
        };
        let live = record.assignments.values().any(AssignmentStatus::is_live);
        let waiting =
            !self.state.memory.pending_questions().is_empty() || self.state.pending_proposals().next().is_some();
        if live && waiting {
            return Ok(());
        }
        let expired = record.assignments.values().any(|s| {
            *s == AssignmentStatus::Abandoned {
                reason: AbandonReason::Deadline,
            }
        });
        let failure = if expired && !live {
            StageFailure::DeadlineExpired
        } else if let Some(stuck) = record.stuck.first() {
            StageFailure::Stuck {
                agent: stuck.agent.clone(),
                state: stuck.state.clone(),
                trace: stuck.trace.clone(),
            }
        } else {
            StageFailure::NoSolution
        };
        self.fail(failure)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::casebase::CaseBase;

    fn pack() -> Arc<DomainPack> {
        Arc::new(DomainPack::builtin())
    }

    fn engine_with(cases: SharedCaseBase) -> Engine {
        Engine::new(pack()).with_cases(cases)
    }

    fn findings(scenario: &str) -> BTreeMap<String, FindingValue> {
        pack().scenario(scenario).unwrap().findings.clone()
    }

    /// Answers every question from `answers` and validates the first
    /// pending proposal until the session closes or stalls.
    fn play(sup: &mut Supervisor, answers: &BTreeMap<String, FindingValue>) {
        while !sup.state().is_closed() {
            let proposal = sup
                .state()
                .pending_proposals()
                .next()
                .map(|p| p.proposal.proposal_id.clone());
            if let Some(sign) = sup.state().memory.pending_questions().front().cloned() {
                sup.answer(&sign, answers[&sign].clone()).unwrap();
            } else if let Some(id) = proposal {
                sup.validate(&id).unwrap();
            } else {
                break;
            }
        }
    }

    fn values(state: &SupervisorState) -> Vec<&str> {
        state.components.values().map(|c| c.value.as_str()).collect()
    }

    #[test]
    fn viral_session_completes_and_retains_a_case() {
        let cases = CaseBase::in_memory().shared();
        let mut sup = engine_with(cases.clone()).supervisor();
        sup.start([("SO1".to_string(), FindingValue::Present)]).unwrap();
        play(&mut sup, &findings("viral"));
        assert_eq!(sup.status(), SessionStatus::Completed);
        assert_eq!(values(sup.state()), ["Δ1", "Π1", "Θ1", "SΘ"]);
        assert_eq!(sup.state().case_id.as_deref(), Some("case-000001"));
        let base = cases.read().unwrap();
        let case = base.get("case-000001").unwrap();
        assert_eq!(case.trace, sup.state().trace);
        assert_eq!(case.result, "Δ1 Π1 Θ1 SΘ");
        assert_eq!(sup.log().len(), 62);
    }

    #[test]
    fn empty_start_asks_for_so1_first() {
        let mut sup = engine_with(CaseBase::in_memory().shared()).supervisor();
        let events = sup.start([]).unwrap();
        let first = events
            .iter()
            .find(|e| e.performative == Performative::QueryUser)
            .unwrap();
        assert!(matches!(&first.content, Payload::Question { sign, .. } if sign == "SO1"));
        assert_eq!(sup.status(), SessionStatus::AwaitingUser);
    }

    #[test]
    fn absent_so1_fails_stuck_at_start() {
        let mut sup = engine_with(CaseBase::in_memory().shared()).supervisor();
        sup.start([("SO1".to_string(), FindingValue::Absent)]).unwrap();
        assert_eq!(sup.status(), SessionStatus::Failed);
        match sup.state().failure.as_ref().unwrap() {
            StageFailure::Stuck { agent, state, trace } => {
                assert_eq!(agent, "automaton:Δ");
                assert_eq!(state, "Start");
                assert!(trace.is_empty());
            }
            other => panic!("unexpected failure {other:?}"),
        }
    }

    #[test]
    fn deadline_expiry_abandons_and_fails_the_stage() {
        let config = EngineConfig {
            deadline_ms: 5,
            ..EngineConfig::default()
        };
        let mut sup = engine_with(CaseBase::in_memory().shared())
            .with_config(config)
            .supervisor();
        sup.start([("SO1".to_string(), FindingValue::Present)]).unwrap();
        assert_eq!(sup.status(), SessionStatus::AwaitingUser);
        sup.clock_mut().advance(10);
        let events = sup.tick().unwrap();
        let abandoned: Vec<&str> = events
            .iter()
            .filter(|e| {
                matches!(
                    e.content,
                    Payload::Abandon {
                        reason: AbandonReason::Deadline
                    }
                )
            })
            .map(|e| e.sender.as_str())
            .collect();
        assert_eq!(abandoned, ["automaton:Δ", "case-based"]);
        assert_eq!(sup.state().failure, Some(StageFailure::DeadlineExpired));
        assert!(matches!(
            sup.answer("SE1", FindingValue::Present),
            Err(AgencyError::SessionClosed(SessionStatus::Failed))
        ));
    }

    #[test]
    fn validate_cancels_competitors_and_freezes_the_result() {
        let cases = CaseBase::in_memory().shared();
        let engine = engine_with(cases.clone());
        let mut first = engine.supervisor();
        first.start(findings("viral")).unwrap();
        play(&mut first, &findings("viral"));

        let mut sup = engine.supervisor();
        sup.start(findings("viral")).unwrap();
        let pending: Vec<(String, String)> = sup
            .state()
            .pending_proposals()
            .map(|p| (p.proposal.proposal_id.clone(), p.agent.clone()))
            .collect();
        assert_eq!(
            pending,
            [
                ("proposal-1".to_string(), "automaton:Δ".to_string()),
                ("proposal-2".to_string(), "case-based".to_string())
            ]
        );
        let events = sup.validate("proposal-2").unwrap();
        let cancels: Vec<&str> = events
            .iter()
            .filter(|e| e.performative == Performative::Cancel)
            .map(|e| e.receiver.as_str())
            .collect();
        assert_eq!(cancels, ["automaton:Δ"]);
        assert!(events.iter().any(|e| e.sender == "automaton:Δ"
            && e.content
                == Payload::Abandon {
                    reason: AbandonReason::SolutionValidated
                }));
        assert_eq!(
            sup.state().proposal("proposal-1").unwrap().status,
            ProposalStatus::Withdrawn
        );
        assert_eq!(sup.state().memory.stage_result(StageKind::Diagnosis), Some("Δ1"));
        assert!(matches!(
            sup.validate("proposal-1"),
            Err(AgencyError::UnknownProposal(_))
        ));
        assert_eq!(sup.state().current_stage(), Some(StageKind::Prognosis));
    }

    #[test]
    fn rejecting_a_case_suggestion_revises_the_case() {
        let cases = CaseBase::in_memory().shared();
        let engine = engine_with(cases.clone());
        let mut first = engine.supervisor();
        first.start(findings("viral")).unwrap();
        play(&mut first, &findings("viral"));

        let mut sup = engine.supervisor();
        sup.start(findings("viral")).unwrap();
        sup.reject("proposal-2", Some("not this one".into())).unwrap();
        let base = cases.read().unwrap();
        let revisions = &base.get("case-000001").unwrap().revisions;
        assert_eq!(revisions.len(), 1);
        assert_eq!(revisions[0].note, "not this one");
        assert_eq!(
            sup.state().proposal("proposal-2").unwrap().status,
            ProposalStatus::Rejected
        );
        assert_eq!(sup.status(), SessionStatus::AwaitingUser);
    }

    #[test]
    fn replaying_the_log_reproduces_the_state() {
        for scenario in ["viral", "benign-bacterial", "severe-bacterial"] {
            let mut sup = engine_with(CaseBase::in_memory().shared()).supervisor();
            sup.start(findings(scenario)).unwrap();
            play(&mut sup, &findings(scenario));
            assert_eq!(sup.status(), SessionStatus::Completed, "{scenario}");
            assert_eq!(&session_replay(sup.log()).unwrap(), sup.state());
        }
    }

    #[test]
    fn threaded_and_cooperative_logs_are_identical() {
        let run = |scheduler| {
            let config = EngineConfig {
                scheduler,
                ..EngineConfig::default()
            };
            let engine = engine_with(CaseBase::in_memory().shared()).with_config(config);
            let mut logs = Vec::new();
            for _ in 0..2 {
                let mut sup = engine.supervisor();
                sup.start([("SO1".to_string(), FindingValue::Present)]).unwrap();
                play(&mut sup, &findings("severe-bacterial"));
                logs.push(sup.log().to_vec());
            }
            logs
        };
        assert_eq!(run(Scheduler::Cooperative), run(Scheduler::Threaded));
    }

    #[test]
    fn resumed_session_continues_like_the_original() {
        let answers = findings("benign-bacterial");
        let mut whole = engine_with(CaseBase::in_memory().shared()).supervisor();
        whole.start([("SO1".to_string(), FindingValue::Present)]).unwrap();
        play(&mut whole, &answers);

        let engine = engine_with(CaseBase::in_memory().shared());
        let mut part = engine.supervisor();
        part.start([("SO1".to_string(), FindingValue::Present)]).unwrap();
        let mut resumed =
            Supervisor::resume(engine.clone(), engine.standard_agents(), part.log().to_vec(), false).unwrap();
        play(&mut resumed, &answers);
        assert_eq!(resumed.log(), whole.log());
    }

    #[test]
    fn commands_are_checked() {
        let mut sup = engine_with(CaseBase::in_memory().shared()).supervisor();
        assert!(matches!(
            sup.answer("SO1", FindingValue::Present),
            Err(AgencyError::NotStarted)
        ));
        sup.start([]).unwrap();
        assert!(matches!(sup.start([]), Err(AgencyError::AlreadyStarted)));
        assert!(matches!(
            sup.answer("XX", FindingValue::Present),
            Err(AgencyError::UnknownSign(_))
        ));
        assert!(matches!(
            sup.answer("SE2", FindingValue::Present),
            Err(AgencyError::InvalidValue { .. })
        ));
        assert!(matches!(
            sup.validate("proposal-9"),
            Err(AgencyError::UnknownProposal(_))
        ));
        assert_eq!(sup.state().memory.version(), 1);
    }

    #[test]
    fn registry_rejects_duplicate_agent_ids() {
        let engine = engine_with(CaseBase::in_memory().shared());
        let mut agents = engine.standard_agents();
        agents.push(agents[0].clone());
        assert!(matches!(Supervisor::new(engine, agents), Err(AgencyError::Registry(_))));
    }

    #[test]
    fn no_competent_agent_fails_the_first_stage() {
        let engine = engine_with(CaseBase::in_memory().shared());
        let agents: Vec<Arc<dyn Agent>> = vec![Arc::new(EpidemiologyAgent::new(&engine.pack, 0.5))];
        let mut sup = Supervisor::new(engine, agents).unwrap();
        sup.start([]).unwrap();
        assert_eq!(sup.state().failure, Some(StageFailure::NoCompetentAgent));
    }

    #[test]
    fn journal_sees_every_entry_in_order() {
        let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = seen.clone();
        let mut sup = engine_with(CaseBase::in_memory().shared())
            .supervisor()
            .with_journal(Box::new(move |e| {
                sink.lock().unwrap().push(e.seq);
                Ok(())
            }));
        sup.start(findings("viral")).unwrap();
        let seqs: Vec<u64> = sup.log().iter().map(|e| e.seq).collect();
        assert_eq!(*seen.lock().unwrap(), seqs);
        assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    }
}
