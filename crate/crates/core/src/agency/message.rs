use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::descriptor::{CapabilityAnswer, Task};
use crate::automaton::TraceStep;
use crate::casebase::FindingDifference;
use crate::memory::FindingValue;
use crate::ontology::Literal;
use crate::stage::StageKind;

pub const SUPERVISOR: &str = "supervisor";
pub const USER: &str = "user";
/// Receiver of messages addressed to every registered agent.
pub const BROADCAST: &str = "*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Performative {
    Announce,
    AcceptTask,
    DeclineTask,
    QueryUser,
    UserResponse,
    Inform,
    ProposeSolution,
    Validate,
    Reject,
    Abandon,
    Cancel,
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbandonReason {
    SolutionValidated,
    Deadline,
    ObjectiveChanged,
}

impl fmt::Display for AbandonReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbandonReason::SolutionValidated => "solution_validated",
            AbandonReason::Deadline => "deadline",
            AbandonReason::ObjectiveChanged => "objective_changed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalOrigin {
    Automaton {
        automaton: String,
    },
    CaseBased {
        case_id: String,
        score: f64,
        differences: Vec<FindingDifference>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Assigned by the supervisor when the proposal is logged.
    pub proposal_id: String,
    pub stage: StageKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub trace: Vec<TraceStep>,
    pub origin: ProposalOrigin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum StageFailure {
    NoCompetentAgent,
    Stuck {
        agent: String,
        state: String,
        trace: Vec<TraceStep>,
    },
    DeadlineExpired,
    NoSolution,
    /// The general automaton could not advance after a validated result.
    GeneralAutomaton {
        state: String,
    },
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageFailure::NoCompetentAgent => f.write_str("no competent agent"),
            StageFailure::Stuck { agent, state, .. } => {
                write!(f, "agent `{agent}` is stuck in state {state}")
            }
            StageFailure::DeadlineExpired => f.write_str("deadline expired"),
            StageFailure::NoSolution => f.write_str("no agent produced an acceptable solution"),
            StageFailure::GeneralAutomaton { state } => {
                write!(f, "general automaton cannot leave state {state}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "info", rename_all = "snake_case")]
pub enum Info {
    /// The agent's automaton cannot advance with the current findings.
    Stuck {
        state: String,
        trace: Vec<TraceStep>,
    },
    Epidemiology {
        diagnosis: String,
        attributes: BTreeMap<String, Literal>,
    },
    /// Work in progress without a result; keeps the session busy.
    Progress {
        note: String,
    },
    AgentError {
        message: String,
    },
    StageFailed {
        failure: StageFailure,
    },
    Completed {
        advance: TraceStep,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        case_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retention_error: Option<String>,
    },
}

/// Message content. Each performative has exactly one payload shape;
/// memory-mutating payloads carry the version they produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Announce {
        task: Task,
        /// General-automaton transition that made this stage current.
        advance: TraceStep,
    },
    Capability {
        answer: CapabilityAnswer,
    },
    Question {
        sign: String,
        version: u64,
    },
    Answer {
        sign: String,
        value: FindingValue,
        version: u64,
    },
    Proposal {
        proposal: Proposal,
    },
    Validation {
        proposal_id: String,
        version: u64,
    },
    Rejection {
        proposal_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Abandon {
        reason: AbandonReason,
    },
    Cancel {
        validated: String,
    },
    Inform {
        info: Info,
    },
}

impl Payload {
    /// Performatives this payload may travel with.
    pub fn fits(&self, performative: Performative) -> bool {
        use Performative as P;
        matches!(
            (self, performative),
            (Payload::Announce { .. }, P::Announce)
                | (
                    Payload::Capability {
                        answer: CapabilityAnswer::Accept
                    },
                    P::AcceptTask
                )
                | (
                    Payload::Capability {
                        answer: CapabilityAnswer::Decline(_)
                    },
                    P::DeclineTask
                )
                | (Payload::Question { .. }, P::QueryUser)
                | (Payload::Answer { .. }, P::UserResponse)
                | (Payload::Proposal { .. }, P::ProposeSolution)
                | (Payload::Validation { .. }, P::Validate)
                | (Payload::Rejection { .. }, P::Reject)
                | (Payload::Abandon { .. }, P::Abandon)
                | (Payload::Cancel { .. }, P::Cancel)
                | (Payload::Inform { .. }, P::Inform)
        )
    }
}

/// One line of the session message log. `seq` is the total order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    /// Milliseconds of session time.
    pub timestamp: u64,
    pub performative: Performative,
    pub sender: String,
    pub receiver: String,
    pub conversation: String,
    pub content: Payload,
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }

    pub fn addressed_to(&self, agent: &str) -> bool {
        self.receiver == agent || self.receiver == BROADCAST
    }
}

/// A message an agent wants sent; the supervisor stamps sequence, time and
/// sender.
#[derive(Clone, Debug, PartialEq)]
pub struct Draft {
    pub performative: Performative,
    pub receiver: String,
    pub content: Payload,
}

impl Draft {
    pub fn query(sign: &str) -> Self {
        Draft {
            performative: Performative::QueryUser,
            receiver: USER.into(),
            content: Payload::Question {
                sign: sign.to_string(),
                version: 0,
            },
        }
    }

    pub fn propose(proposal: Proposal) -> Self {
        Draft {
            performative: Performative::ProposeSolution,
            receiver: USER.into(),
            content: Payload::Proposal { proposal },
        }
    }

    pub fn inform(info: Info) -> Self {
        Draft {
            performative: Performative::Inform,
            receiver: SUPERVISOR.into(),
            content: Payload::Inform { info },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_shape() {
        let entry = LogEntry {
            seq: 3,
            timestamp: 12,
            performative: Performative::UserResponse,
            sender: USER.into(),
            receiver: SUPERVISOR.into(),
            conversation: "task-1".into(),
            content: Payload::Answer {
                sign: "SO1".into(),
                value: FindingValue::Present,
                version: 2,
            },
        };
        let value: serde_json::Value = serde_json::from_str(&entry.to_line()).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "seq",
                "timestamp",
                "performative",
                "sender",
                "receiver",
                "conversation",
                "content"
            ]
        );
        assert_eq!(value["content"]["type"], "answer");
        let back: LogEntry = serde_json::from_value(value).unwrap();
        assert_eq!(back, entry);
    }

    #[test]
    fn payloads_fit_their_performatives() {
        let abandon = Payload::Abandon {
            reason: AbandonReason::Deadline,
        };
        assert!(abandon.fits(Performative::Abandon));
        assert!(!abandon.fits(Performative::Cancel));
        let accept = Payload::Capability {
            answer: CapabilityAnswer::Accept,
        };
        assert!(accept.fits(Performative::AcceptTask));
        assert!(!accept.fits(Performative::DeclineTask));
    }
}
