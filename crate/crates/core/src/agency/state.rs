use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::descriptor::{CapabilityAnswer, DeclineReason, Task};
use super::message::{AbandonReason, Info, LogEntry, Payload, Performative, Proposal, StageFailure, SUPERVISOR, USER};
use crate::automaton::TraceStep;
use crate::casebase::{Component, SessionTraceStep};
use crate::memory::WorkingMemory;
use crate::stage::StageKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("message log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("message log corrupt at seq {seq}: {reason}")]
    LogCorrupt { seq: u64, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AssignmentStatus {
    Active,
    Declined {
        reason: DeclineReason,
    },
    /// The agent's proposal was validated.
    Completed,
    /// Told to stop; acknowledges with Abandon at its next scheduling point.
    Cancelled,
    Abandoned {
        reason: AbandonReason,
    },
}

impl AssignmentStatus {
    /// Still holds the task and will be scheduled.
    pub fn is_live(&self) -> bool {
        matches!(self, AssignmentStatus::Active | AssignmentStatus::Cancelled)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Resolved { proposal_id: String },
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StuckReport {
    pub agent: String,
    pub state: String,
    pub trace: Vec<TraceStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: Task,
    pub status: TaskStatus,
    /// Agent id to assignment, in announcement-answer order of ids.
    pub assignments: BTreeMap<String, AssignmentStatus>,
    pub stuck: Vec<StuckReport>,
    /// Agents that sent any other Inform on this conversation.
    pub informants: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalStatus {
    Pending,
    Validated,
    Rejected,
    /// Replaced by a newer proposal of the same agent.
    Superseded,
    /// Dropped because its agent abandoned or a competitor was validated.
    Withdrawn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub proposal: Proposal,
    pub agent: String,
    pub conversation: String,
    pub status: ProposalStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Active,
    AwaitingUser,
    Completed,
    Failed,
}

/// Everything the supervisor knows, rebuilt exactly by folding the message
/// log through [`SupervisorState::apply`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisorState {
    pub memory: WorkingMemory,
    /// `None` until the first task is announced.
    pub general_state: Option<String>,
    pub general_trace: Vec<TraceStep>,
    /// `task-n` is at index n - 1.
    pub tasks: Vec<TaskRecord>,
    /// `proposal-n` is at index n - 1.
    pub proposals: Vec<ProposalRecord>,
    /// Stage-automaton steps of the validated proposals, in stage order.
    pub trace: Vec<SessionTraceStep>,
    pub components: BTreeMap<StageKind, Component>,
    pub completed: bool,
    pub failure: Option<StageFailure>,
    pub case_id: Option<String>,
    pub next_seq: u64,
    pub last_timestamp: u64,
}

pub fn task_id(index: usize) -> String {
    format!("task-{}", index + 1)
}

pub fn proposal_id(index: usize) -> String {
    format!("proposal-{}", index + 1)
}

fn index_of(id: &str, prefix: &str) -> Option<usize> {
    id.strip_prefix(prefix)?
        .parse::<usize>()
        .ok()
        .filter(|n| *n >= 1)
        .map(|n| n - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbandonCheck {
    Continue,
    Abandon(AbandonReason),
}

impl SupervisorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn status(&self) -> SessionStatus {
        if self.completed {
            SessionStatus::Completed
        } else if self.failure.is_some() {
            SessionStatus::Failed
        } else if !self.memory.pending_questions().is_empty() || self.pending_proposals().next().is_some() {
            SessionStatus::AwaitingUser
        } else {
            SessionStatus::Active
        }
    }

    pub fn is_closed(&self) -> bool {
        self.completed || self.failure.is_some()
    }

    /// Clinical stage of the general automaton's current state.
    pub fn current_stage(&self) -> Option<StageKind> {
        self.general_state.as_deref().and_then(StageKind::from_state_label)
    }

    pub fn task(&self, id: &str) -> Option<&TaskRecord> {
        self.tasks.get(index_of(id, "task-")?).filter(|t| t.task.id == id)
    }

    fn task_mut(&mut self, id: &str) -> Option<&mut TaskRecord> {
        let index = index_of(id, "task-")?;
        self.tasks.get_mut(index)
    }

    pub fn current_task(&self) -> Option<&TaskRecord> {
        self.tasks.last().filter(|t| t.status == TaskStatus::Open)
    }

    pub fn proposal(&self, id: &str) -> Option<&ProposalRecord> {
        self.proposals
            .get(index_of(id, "proposal-")?)
            .filter(|p| p.proposal.proposal_id == id)
    }

    pub fn pending_proposals(&self) -> impl Iterator<Item = &ProposalRecord> {
        self.proposals.iter().filter(|p| p.status == ProposalStatus::Pending)
    }

    pub fn proposals_by<'a, 'q>(
        &'a self,
        agent: &'q str,
        conversation: &'q str,
    ) -> impl Iterator<Item = &'a ProposalRecord> + use<'a, 'q> {
        self.proposals
            .iter()
            .filter(move |p| p.agent == agent && p.conversation == conversation)
    }

    /// Decides whether `agent` must drop its assignment on `conversation`.
    pub fn check_abandon(&self, conversation: &str, agent: &str, now: u64) -> AbandonCheck {
        let Some(record) = self.task(conversation) else {
            return AbandonCheck::Abandon(AbandonReason::ObjectiveChanged);
        };
        if let TaskStatus::Resolved { proposal_id } = &record.status {
            let winner = self.proposal(proposal_id).map(|p| p.agent.as_str());
            if winner != Some(agent) {
                return AbandonCheck::Abandon(AbandonReason::SolutionValidated);
            }
        }
        if now >= record.task.expires_at() {
            return AbandonCheck::Abandon(AbandonReason::Deadline);
        }
        if self.current_stage() != Some(record.task.stage) || record.status != TaskStatus::Open {
            return AbandonCheck::Abandon(AbandonReason::ObjectiveChanged);
        }
        AbandonCheck::Continue
    }

    /// Folds one log entry into the state, rejecting entries that could not
    /// have been produced by a live supervisor at this point.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), ReplayError> {
        let corrupt = |reason: String| ReplayError::LogCorrupt { seq: entry.seq, reason };
        if entry.seq != self.next_seq {
            return Err(corrupt(format!("expected seq {}", self.next_seq)));
        }
        if entry.timestamp < self.last_timestamp {
            return Err(corrupt("timestamp goes backwards".into()));
        }
        if !entry.content.fits(entry.performative) {
            return Err(corrupt(format!(
                "payload does not fit performative {}",
                entry.performative
            )));
        }
        if self.is_closed() {
            return Err(corrupt("session already closed".into()));
        }
        if entry.performative != Performative::Announce && self.task(&entry.conversation).is_none() {
            return Err(corrupt(format!("unknown conversation `{}`", entry.conversation)));
        }
        let check_version = |produced: u64, claimed: u64| {
            if produced == claimed {
                Ok(())
            } else {
                Err(ReplayError::LogCorrupt {
                    seq: entry.seq,
                    reason: format!("memory version {claimed} does not follow, expected {produced}"),
                })
            }
        };
        let sender = entry.sender.as_str();
        let is_agent = sender != USER && sender != SUPERVISOR;
        match &entry.content {
            Payload::Announce { task, advance } => {
                let expected = task_id(self.tasks.len());
                if task.id != expected || entry.conversation != expected {
                    return Err(corrupt(format!("expected task id {expected}")));
                }
                if self.current_task().is_some() {
                    return Err(corrupt("previous task still open".into()));
                }
                if let Some(state) = &self.general_state {
                    if *state != advance.state {
                        return Err(corrupt(format!("general automaton is in {state}")));
                    }
                }
                if StageKind::from_state_label(&advance.to) != Some(task.stage) {
                    return Err(corrupt("announced stage differs from the general automaton".into()));
                }
                if task.context_version != self.memory.version() {
                    return Err(corrupt("task context version differs from memory".into()));
                }
                self.general_state = Some(advance.to.clone());
                self.general_trace.push(advance.clone());
                self.tasks.push(TaskRecord {
                    task: task.clone(),
                    status: TaskStatus::Open,
                    assignments: BTreeMap::new(),
                    stuck: Vec::new(),
                    informants: BTreeSet::new(),
                });
            }
            Payload::Capability { answer } => {
                let record = self.task_mut(&entry.conversation).expect("checked above");
                if !is_agent || record.assignments.contains_key(sender) {
                    return Err(corrupt(format!("`{sender}` cannot answer this announcement")));
                }
                let status = match answer {
                    CapabilityAnswer::Accept => AssignmentStatus::Active,
                    CapabilityAnswer::Decline(reason) => AssignmentStatus::Declined { reason: reason.clone() },
                };
                record.assignments.insert(sender.to_string(), status);
            }
            Payload::Question { sign, version } => {
                let produced = self.memory.enqueue_question(sign.clone());
                check_version(produced, *version)?;
            }
            Payload::Answer { sign, value, version } => {
                if sender != USER {
                    return Err(corrupt("answers come from the user".into()));
                }
                let produced = self.memory.record_finding(sign.clone(), value.clone());
                check_version(produced, *version)?;
            }
            Payload::Proposal { proposal } => {
                let expected = proposal_id(self.proposals.len());
                if proposal.proposal_id != expected {
                    return Err(corrupt(format!("expected proposal id {expected}")));
                }
                let record = self.task(&entry.conversation).expect("checked above");
                if record.status != TaskStatus::Open
                    || record.assignments.get(sender) != Some(&AssignmentStatus::Active)
                    || proposal.stage != record.task.stage
                {
                    return Err(corrupt(format!("`{sender}` cannot propose on this conversation")));
                }
                for earlier in self.proposals.iter_mut() {
                    if earlier.agent == sender
                        && earlier.conversation == entry.conversation
                        && earlier.status == ProposalStatus::Pending
                    {
                        earlier.status = ProposalStatus::Superseded;
                    }
                }
                self.proposals.push(ProposalRecord {
                    proposal: proposal.clone(),
                    agent: sender.to_string(),
                    conversation: entry.conversation.clone(),
                    status: ProposalStatus::Pending,
                });
            }
            Payload::Validation { proposal_id, version } => {
                let index = self
                    .pending_in(proposal_id, &entry.conversation)
                    .ok_or_else(|| corrupt(format!("`{proposal_id}` is not pending here")))?;
                let record = self.proposals[index].clone();
                let produced = self
                    .memory
                    .set_stage_result(record.proposal.stage, record.proposal.value.clone());
                check_version(produced, *version)?;
                for other in self.proposals.iter_mut() {
                    if other.conversation == entry.conversation && other.status == ProposalStatus::Pending {
                        other.status = ProposalStatus::Withdrawn;
                    }
                }
                self.proposals[index].status = ProposalStatus::Validated;
                let task = self.task_mut(&entry.conversation).expect("checked above");
                task.status = TaskStatus::Resolved {
                    proposal_id: proposal_id.clone(),
                };
                task.assignments
                    .insert(record.agent.clone(), AssignmentStatus::Completed);
                let start = self.trace.len();
                self.trace
                    .extend(record.proposal.trace.iter().map(|step| SessionTraceStep {
                        stage: record.proposal.stage,
                        step: step.clone(),
                    }));
                self.components.insert(
                    record.proposal.stage,
                    Component {
                        value: record.proposal.value.clone(),
                        label: record.proposal.label.clone(),
                        detail: record.proposal.detail.clone(),
                        trace: [start, self.trace.len()],
                    },
                );
            }
            Payload::Rejection { proposal_id, .. } => {
                let index = self
                    .pending_in(proposal_id, &entry.conversation)
                    .ok_or_else(|| corrupt(format!("`{proposal_id}` is not pending here")))?;
                self.proposals[index].status = ProposalStatus::Rejected;
            }
            Payload::Abandon { reason } => {
                let record = self.task_mut(&entry.conversation).expect("checked above");
                match record.assignments.get_mut(sender) {
                    Some(status) if status.is_live() => *status = AssignmentStatus::Abandoned { reason: *reason },
                    _ => return Err(corrupt(format!("`{sender}` holds no live assignment"))),
                }
                for p in self.proposals.iter_mut() {
                    if p.agent == sender && p.conversation == entry.conversation && p.status == ProposalStatus::Pending
                    {
                        p.status = ProposalStatus::Withdrawn;
                    }
                }
            }
            Payload::Cancel { .. } => {
                let record = self.task_mut(&entry.conversation).expect("checked above");
                match record.assignments.get_mut(&entry.receiver) {
                    Some(status @ AssignmentStatus::Active) if sender == SUPERVISOR => {
                        *status = AssignmentStatus::Cancelled
                    }
                    _ => return Err(corrupt(format!("cannot cancel `{}`", entry.receiver))),
                }
            }
            Payload::Inform { info } => self.apply_inform(entry, info).map_err(corrupt)?,
        }
        self.next_seq += 1;
        self.last_timestamp = entry.timestamp;
        Ok(())
    }

    fn pending_in(&self, proposal_id: &str, conversation: &str) -> Option<usize> {
        let index = index_of(proposal_id, "proposal-")?;
        let p = self.proposals.get(index)?;
        (p.status == ProposalStatus::Pending
            && p.conversation == conversation
            && self.current_task().is_some_and(|t| t.task.id == conversation))
        .then_some(index)
    }

    fn apply_inform(&mut self, entry: &LogEntry, info: &Info) -> Result<(), String> {
        let sender = entry.sender.as_str();
        match info {
            Info::StageFailed { failure } => {
                if sender != SUPERVISOR {
                    return Err("only the supervisor fails a stage".into());
                }
                let record = self.task_mut(&entry.conversation).expect("checked by caller");
                record.status = TaskStatus::Failed;
                self.failure = Some(failure.clone());
            }
            Info::Completed { advance, case_id, .. } => {
                if sender != SUPERVISOR || self.general_state.as_deref() != Some(advance.state.as_str()) {
                    return Err("completion does not follow the general automaton".into());
                }
                self.general_state = Some(advance.to.clone());
                self.general_trace.push(advance.clone());
                self.completed = true;
                self.case_id = case_id.clone();
            }
            Info::Stuck { state, trace } => {
                let record = self.task_mut(&entry.conversation).expect("checked by caller");
                record.stuck.push(StuckReport {
                    agent: sender.to_string(),
                    state: state.clone(),
                    trace: trace.clone(),
                });
            }
            Info::Epidemiology { .. } | Info::Progress { .. } | Info::AgentError { .. } => {
                let record = self.task_mut(&entry.conversation).expect("checked by caller");
                record.informants.insert(sender.to_string());
            }
        }
        Ok(())
    }
}

/// Rebuilds the supervisor state from a complete, ordered message log.
pub fn session_replay(log: &[LogEntry]) -> Result<SupervisorState, ReplayError> {
    let mut state = SupervisorState::new();
    for entry in log {
        state.apply(entry)?;
    }
    Ok(state)
}

/// Parses a JSON-lines message log; blank lines are ignored.
pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| ReplayError::Parse {
                line: index + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agency::descriptor::{Goal, DEFAULT_DEADLINE_MS};
    use crate::memory::FindingValue;

    fn entry(seq: u64, performative: Performative, sender: &str, receiver: &str, content: Payload) -> LogEntry {
        LogEntry {
            seq,
            timestamp: seq,
            performative,
            sender: sender.into(),
            receiver: receiver.into(),
            conversation: "task-1".into(),
            content,
        }
    }

    fn announce() -> LogEntry {
        entry(
            0,
            Performative::Announce,
            SUPERVISOR,
            "*",
            Payload::Announce {
                task: Task {
                    id: "task-1".into(),
                    stage: StageKind::Diagnosis,
                    goal: Goal::ReachTerminal { automaton: "d".into() },
                    deadline_ms: DEFAULT_DEADLINE_MS,
                    announced_at: 0,
                    context_version: 0,
                },
                advance: TraceStep {
                    state: "Start".into(),
                    transition: 0,
                    to: "Δ".into(),
                },
            },
        )
    }

    fn small_log() -> Vec<LogEntry> {
        vec![
            announce(),
            entry(
                1,
                Performative::AcceptTask,
                "a",
                SUPERVISOR,
                Payload::Capability {
                    answer: CapabilityAnswer::Accept,
                },
            ),
            entry(
                2,
                Performative::QueryUser,
                "a",
                USER,
                Payload::Question {
                    sign: "SO1".into(),
                    version: 1,
                },
            ),
            entry(
                3,
                Performative::UserResponse,
                USER,
                SUPERVISOR,
                Payload::Answer {
                    sign: "SO1".into(),
                    value: FindingValue::Present,
                    version: 2,
                },
            ),
        ]
    }

    #[test]
    fn empty_log_is_the_initial_state() {
        assert_eq!(session_replay(&[]).unwrap(), SupervisorState::new());
    }

    #[test]
    fn fold_tracks_memory_and_assignments() {
        let state = session_replay(&small_log()).unwrap();
        assert_eq!(state.memory.version(), 2);
        assert_eq!(state.memory.finding("SO1"), &FindingValue::Present);
        assert_eq!(state.current_stage(), Some(StageKind::Diagnosis));
        assert_eq!(state.tasks[0].assignments["a"], AssignmentStatus::Active);
        assert_eq!(state.status(), SessionStatus::Active);
    }

    #[test]
    fn deleted_message_is_detected() {
        let mut log = small_log();
        log.remove(2);
        assert!(matches!(
            session_replay(&log),
            Err(ReplayError::LogCorrupt { seq: 3, .. })
        ));
        // Renumbering hides the gap but not the version jump.
        log[2].seq = 2;
        assert!(matches!(
            session_replay(&log),
            Err(ReplayError::LogCorrupt { seq: 2, .. })
        ));
    }

    #[test]
    fn check_abandon_conditions() {
        let state = session_replay(&small_log()).unwrap();
        assert_eq!(state.check_abandon("task-1", "a", 10), AbandonCheck::Continue);
        assert_eq!(
            state.check_abandon("task-1", "a", DEFAULT_DEADLINE_MS),
            AbandonCheck::Abandon(AbandonReason::Deadline)
        );
        let mut moved = state.clone();
        moved.general_state = Some("Π".into());
        assert_eq!(
            moved.check_abandon("task-1", "a", 10),
            AbandonCheck::Abandon(AbandonReason::ObjectiveChanged)
        );
    }

    #[test]
    fn parse_log_reports_line_numbers() {
        let text = format!("{}\n\n{{oops\n", small_log()[0].to_line());
        assert!(matches!(parse_log(&text), Err(ReplayError::Parse { line: 3, .. })));
        let lines: String = small_log().iter().map(|e| e.to_line() + "\n").collect();
        assert_eq!(parse_log(&lines).unwrap(), small_log());
    }
}
