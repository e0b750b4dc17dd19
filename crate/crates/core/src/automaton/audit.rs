//! Exhaustive audits over complete finding assignments.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Automaton, AutomatonError, StepOutcome, Truth, ANY_RESULT};
use crate::memory::{FindingValue, SignSet, WorkingMemory};
use crate::stage::StageKind;

pub const DEFAULT_SIGN_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnumerationMode {
    /// Each sign absent or affirmative: 2^n assignments.
    KnownOnly,
    /// Each sign absent, affirmative or unknown: 3^n assignments.
    WithUnknown,
}

/// One complete situation: a value for every declared sign plus a choice of
/// stage results among those the guards mention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub findings: BTreeMap<String, FindingValue>,
    pub stage_results: BTreeMap<StageKind, String>,
}

impl Assignment {
    pub fn to_memory(&self) -> WorkingMemory {
        let mut memory = WorkingMemory::new();
        for (sign, value) in &self.findings {
            if value.is_known() {
                memory.record_finding(sign.clone(), value.clone());
            }
        }
        for (stage, value) in &self.stage_results {
            memory.set_stage_result(*stage, value.clone());
        }
        memory
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub state: String,
    pub assignment: Assignment,
    /// Indices of the simultaneously true transitions.
    pub transitions: Vec<usize>,
}

type SignAxes = Vec<(String, Vec<FindingValue>)>;
type StageAxes = Vec<(StageKind, Vec<Option<String>>)>;

/// Dimensions of the enumeration: per sign and per mentioned stage.
fn dimensions(
    automaton: &Automaton,
    signs: &SignSet,
    mode: EnumerationMode,
    cap: usize,
) -> Result<(SignAxes, StageAxes), AutomatonError> {
    if signs.len() > cap {
        return Err(AutomatonError::SignSpaceTooLarge {
            signs: signs.len(),
            cap,
        });
    }
    let sign_dims = signs
        .iter()
        .map(|(id, kind)| {
            let mut values = vec![FindingValue::Absent, kind.affirmative()];
            if mode == EnumerationMode::WithUnknown {
                values.push(FindingValue::Unknown);
            }
            (id.to_string(), values)
        })
        .collect();
    let mut mentioned: BTreeMap<StageKind, BTreeSet<String>> = BTreeMap::new();
    for t in &automaton.transitions {
        for (stage, value) in t.guard.stage_results() {
            let values = mentioned.entry(stage).or_default();
            if value != ANY_RESULT {
                values.insert(value.to_string());
            }
        }
    }
    let stage_dims = mentioned
        .into_iter()
        .map(|(stage, values)| {
            let mut options = vec![None];
            if values.is_empty() {
                // Only the wildcard is mentioned; any concrete result will do.
                options.push(Some("?".to_string()));
            }
            options.extend(values.into_iter().map(Some));
            (stage, options)
        })
        .collect();
    Ok((sign_dims, stage_dims))
}

/// Visits every assignment of the enumeration space.
fn for_each_assignment(
    automaton: &Automaton,
    signs: &SignSet,
    mode: EnumerationMode,
    cap: usize,
    mut visit: impl FnMut(&Assignment),
) -> Result<(), AutomatonError> {
    let (sign_dims, stage_dims) = dimensions(automaton, signs, mode, cap)?;
    let radices: Vec<usize> = sign_dims
        .iter()
        .map(|(_, v)| v.len())
        .chain(stage_dims.iter().map(|(_, v)| v.len()))
        .collect();
    let mut digits = vec![0usize; radices.len()];
    loop {
        let findings = sign_dims
            .iter()
            .zip(&digits)
            .map(|((id, values), d)| (id.clone(), values[*d].clone()))
            .collect();
        let stage_results = stage_dims
            .iter()
            .zip(&digits[sign_dims.len()..])
            .filter_map(|((stage, options), d)| options[*d].clone().map(|v| (*stage, v)))
            .collect();
        visit(&Assignment {
            findings,
            stage_results,
        });
        // odometer increment
        let mut position = 0;
        loop {
            if position == radices.len() {
                return Ok(());
            }
            digits[position] += 1;
            if digits[position] < radices[position] {
                break;
            }
            digits[position] = 0;
            position += 1;
        }
    }
}

/// Reports every (state, assignment) where two or more outgoing guards are
/// true at once. An empty result proves that priorities never decide which
/// transition fires.
pub fn check_ambiguity(
    automaton: &Automaton,
    signs: &SignSet,
    mode: EnumerationMode,
    cap: usize,
) -> Result<Vec<Conflict>, AutomatonError> {
    let mut conflicts = Vec::new();
    for_each_assignment(automaton, signs, mode, cap, |assignment| {
        let memory = assignment.to_memory();
        for state in &automaton.states {
            let firing: Vec<usize> = automaton
                .outgoing(state)
                .into_iter()
                .filter(|(_, t)| t.guard.evaluate(&memory) == Truth::True)
                .map(|(index, _)| index)
                .collect();
            if firing.len() >= 2 {
                conflicts.push(Conflict {
                    state: state.clone(),
                    assignment: assignment.clone(),
                    transitions: firing,
                });
            }
        }
    })?;
    Ok(conflicts)
}

/// Terminal states reached by a run from the initial state under some
/// complete known assignment, each with its first witness assignment.
pub fn reachable_final_states(
    automaton: &Automaton,
    signs: &SignSet,
    cap: usize,
) -> Result<BTreeMap<String, Assignment>, AutomatonError> {
    let mut reached: BTreeMap<String, Assignment> = BTreeMap::new();
    let mut failure = None;
    for_each_assignment(automaton, signs, EnumerationMode::KnownOnly, cap, |assignment| {
        if failure.is_some() {
            return;
        }
        match automaton.run_with_budget(&assignment.to_memory(), automaton.states.len()) {
            Ok(run) if run.outcome == StepOutcome::Terminal => {
                reached.entry(run.final_state).or_insert_with(|| assignment.clone());
            }
            Ok(_) => {}
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(reached),
    }
}
