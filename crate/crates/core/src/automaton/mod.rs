//! Declarative finite-state automata for the general clinical workflow and
//! the stage-specific decision tasks. Transitions carry boolean guards over
//! working-memory findings evaluated in three-valued logic, so a run can
//! stop and name exactly the signs it still needs.

mod audit;
mod guard;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::memory::{SignSet, WorkingMemory};
use crate::stage::StageKind;

pub use audit::{check_ambiguity, reachable_final_states, Assignment, Conflict, EnumerationMode, DEFAULT_SIGN_CAP};
pub use guard::{GuardExpr, Truth, ANY_RESULT};

/// Advances allowed before a run is declared cyclic.
pub const DEFAULT_STEP_BUDGET: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum AutomatonError {
    #[error("automaton document is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("transitions[{transition}]: invalid guard: {reason}")]
    GuardSyntax { transition: usize, reason: String },
    #[error("{context}: unknown state `{state}`")]
    UnknownState { context: String, state: String },
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("transitions[{transition}]: guard references undeclared sign `{sign}`")]
    UnknownSign { transition: usize, sign: String },
    #[error("state `{from}` has two transitions with priority {priority}")]
    DuplicatePriority { from: String, priority: i64 },
    #[error("no terminal state is reachable from initial state `{initial}`")]
    UnreachableInitial { initial: String },
    #[error("run exceeded its budget of {budget} steps")]
    StepBudgetExceeded { budget: usize },
    #[error("{signs} signs exceed the enumeration cap of {cap}")]
    SignSpaceTooLarge { signs: usize, cap: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    /// Lower fires first.
    pub priority: i64,
    pub guard: GuardExpr,
}

/// Automaton file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutomatonDocument {
    pub id: String,
    pub stage: StageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub states: Vec<String>,
    pub initial: String,
    pub terminal: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Automaton {
    pub id: String,
    pub stage: StageKind,
    pub note: Option<String>,
    /// Declaration order is kept.
    pub states: Vec<String>,
    pub initial: String,
    pub terminal: BTreeSet<String>,
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum StepOutcome {
    Advanced { to: String, transition: usize },
    NeedsInfo { signs: BTreeSet<String> },
    Stuck,
    Terminal,
}

/// One fired transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: String,
    pub transition: usize,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub trace: Vec<TraceStep>,
    pub final_state: String,
    /// Never `Advanced`.
    pub outcome: StepOutcome,
}

/// Parses and validates an automaton document against the declared signs.
pub fn load_automaton(document: &str, signs: &SignSet) -> Result<Automaton, AutomatonError> {
    let raw: serde_json::Value = serde_json::from_str(document)?;
    // Guards are parsed per transition so syntax errors can name the index.
    if let Some(transitions) = raw.get("transitions").and_then(|t| t.as_array()) {
        for (index, t) in transitions.iter().enumerate() {
            if let Some(guard) = t.get("guard") {
                GuardExpr::from_value(guard).map_err(|reason| AutomatonError::GuardSyntax {
                    transition: index,
                    reason,
                })?;
            }
        }
    }
    let doc: AutomatonDocument = serde_json::from_value(raw)?;
    Automaton::from_document(doc, signs)
}

impl Automaton {
    pub fn from_document(doc: AutomatonDocument, signs: &SignSet) -> Result<Self, AutomatonError> {
        let automaton = Automaton {
            id: doc.id,
            stage: doc.stage,
            note: doc.note,
            states: doc.states,
            initial: doc.initial,
            terminal: doc.terminal.into_iter().collect(),
            transitions: doc.transitions,
        };
        automaton.validate(signs)?;
        Ok(automaton)
    }

    pub fn to_document(&self) -> AutomatonDocument {
        AutomatonDocument {
            id: self.id.clone(),
            stage: self.stage,
            note: self.note.clone(),
            states: self.states.clone(),
            initial: self.initial.clone(),
            terminal: self.terminal.iter().cloned().collect(),
            transitions: self.transitions.clone(),
        }
    }

    pub fn validate(&self, signs: &SignSet) -> Result<(), AutomatonError> {
        let mut declared = BTreeSet::new();
        for state in &self.states {
            if !declared.insert(state.as_str()) {
                return Err(AutomatonError::DuplicateState(state.clone()));
            }
        }
        let known = |context: String, state: &str| {
            if declared.contains(state) {
                Ok(())
            } else {
                Err(AutomatonError::UnknownState {
                    context,
                    state: state.to_string(),
                })
            }
        };
        known("initial".into(), &self.initial)?;
        for state in &self.terminal {
            known("terminal".into(), state)?;
        }
        let mut priorities = BTreeSet::new();
        for (index, t) in self.transitions.iter().enumerate() {
            known(format!("transitions[{index}].from"), &t.from)?;
            known(format!("transitions[{index}].to"), &t.to)?;
            if let Some(sign) = t.guard.signs().into_iter().find(|s| !signs.contains(s)) {
                return Err(AutomatonError::UnknownSign {
                    transition: index,
                    sign: sign.to_string(),
                });
            }
            if !priorities.insert((t.from.as_str(), t.priority)) {
                return Err(AutomatonError::DuplicatePriority {
                    from: t.from.clone(),
                    priority: t.priority,
                });
            }
        }
        if !self.graph_reachable().iter().any(|s| self.terminal.contains(*s)) {
            return Err(AutomatonError::UnreachableInitial {
                initial: self.initial.clone(),
            });
        }
        Ok(())
    }

    /// States reachable from the initial state ignoring guards.
    fn graph_reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::from([self.initial.as_str()]);
        let mut queue = VecDeque::from([self.initial.as_str()]);
        while let Some(state) = queue.pop_front() {
            for t in self.transitions.iter().filter(|t| t.from == state) {
                if seen.insert(t.to.as_str()) {
                    queue.push_back(&t.to);
                }
            }
        }
        seen
    }

    pub fn has_state(&self, state: &str) -> bool {
        self.states.iter().any(|s| s == state)
    }

    pub fn is_terminal(&self, state: &str) -> bool {
        self.terminal.contains(state)
    }

    /// Outgoing transitions of `state` with their indices, in firing order.
    pub fn outgoing(&self, state: &str) -> Vec<(usize, &Transition)> {
        let mut out: Vec<(usize, &Transition)> = self
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.from == state)
            .collect();
        out.sort_by_key(|(index, t)| (t.priority, *index));
        out
    }

    /// True when the transition graph has no cycle.
    pub fn is_acyclic(&self) -> bool {
        let mut indegree: HashMap<&str, usize> = self.states.iter().map(|s| (s.as_str(), 0)).collect();
        for t in &self.transitions {
            *indegree.entry(t.to.as_str()).or_default() += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(s, _)| *s).collect();
        let mut visited = 0;
        while let Some(state) = ready.pop() {
            visited += 1;
            for t in self.transitions.iter().filter(|t| t.from == state) {
                let d = indegree.get_mut(t.to.as_str()).expect("validated state");
                *d -= 1;
                if *d == 0 {
                    ready.push(&t.to);
                }
            }
        }
        visited == indegree.len()
    }

    /// One decision step from `state`.
    ///
    /// The lowest-priority transition whose guard is true fires. Without a
    /// true guard, a terminal state reports `Terminal`; otherwise any
    /// indeterminate guard yields `NeedsInfo` with the unknown signs of all
    /// indeterminate guards, and `Stuck` remains when every guard is false.
    pub fn step(&self, state: &str, memory: &WorkingMemory) -> Result<StepOutcome, AutomatonError> {
        if !self.has_state(state) {
            return Err(AutomatonError::UnknownState {
                context: format!("step on `{}`", self.id),
                state: state.to_string(),
            });
        }
        let mut missing = BTreeSet::new();
        let mut indeterminate = false;
        for (index, t) in self.outgoing(state) {
            match t.guard.evaluate(memory) {
                Truth::True => {
                    return Ok(StepOutcome::Advanced {
                        to: t.to.clone(),
                        transition: index,
                    })
                }
                Truth::Indeterminate => {
                    indeterminate = true;
                    missing.extend(t.guard.unknown_signs(memory));
                }
                Truth::False => {}
            }
        }
        Ok(if self.is_terminal(state) {
            StepOutcome::Terminal
        } else if indeterminate {
            StepOutcome::NeedsInfo { signs: missing }
        } else {
            StepOutcome::Stuck
        })
    }

    /// Steps from the initial state until `Terminal`, `Stuck` or `NeedsInfo`.
    pub fn run_to_terminal(&self, memory: &WorkingMemory) -> Result<RunResult, AutomatonError> {
        self.run_with_budget(memory, DEFAULT_STEP_BUDGET)
    }

    pub fn run_with_budget(&self, memory: &WorkingMemory, budget: usize) -> Result<RunResult, AutomatonError> {
        self.run_from(&self.initial, memory, budget)
    }

    pub fn run_from(&self, start: &str, memory: &WorkingMemory, budget: usize) -> Result<RunResult, AutomatonError> {
        let mut state = start.to_string();
        let mut trace = Vec::new();
        loop {
            match self.step(&state, memory)? {
                StepOutcome::Advanced { to, transition } => {
                    if trace.len() == budget {
                        return Err(AutomatonError::StepBudgetExceeded { budget });
                    }
                    trace.push(TraceStep {
                        state: std::mem::replace(&mut state, to.clone()),
                        transition,
                        to,
                    });
                }
                outcome => {
                    return Ok(RunResult {
                        trace,
                        final_state: state,
                        outcome,
                    })
                }
            }
        }
    }
}
