//! Scripted consultations without a user: findings come from a scenario file
//! and proposals are validated or rejected by the scenario's policy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::agency::{AgencyError, Engine, ProposalOrigin, ProposalStatus, SessionStatus, StageFailure, Supervisor};
use crate::casebase::{CaseProfile, Component, SessionTraceStep};
use crate::domain::{Scenario, ValidationPolicy};
use crate::stage::StageKind;

#[derive(Debug, thiserror::Error)]
pub enum HeadlessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Scenario {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Agency(#[from] AgencyError),
}

/// How a headless run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    /// The agents need a finding the scenario does not provide.
    NeedsInfo,
    Failed,
    /// Completed, but a stage result differs from the scenario's expectation.
    Mismatch,
}

impl RunOutcome {
    pub fn exit_code(self) -> u8 {
        match self {
            RunOutcome::Completed => 0,
            RunOutcome::NeedsInfo => 2,
            RunOutcome::Failed => 3,
            RunOutcome::Mismatch => 4,
        }
    }
}

impl From<RunOutcome> for ExitCode {
    fn from(outcome: RunOutcome) -> Self {
        ExitCode::from(outcome.exit_code())
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Leaves wall-clock times out of the trace.
    pub no_timestamps: bool,
    /// Recorded in the trace; runs are deterministic regardless.
    pub seed: Option<u64>,
    /// Number of similar prior cases listed in the trace.
    pub similar_cases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarCase {
    pub case_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProposalSummary {
    pub proposal_id: String,
    pub agent: String,
    pub stage: StageKind,
    pub value: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub status: ProposalStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub stage: StageKind,
    pub expected: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<String>,
}

/// The trace file written by `smaad run`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTrace {
    pub scenario: String,
    pub pack: String,
    pub reconstructed: bool,
    pub outcome: RunOutcome,
    pub status: SessionStatus,
    pub components: BTreeMap<StageKind, Component>,
    pub trace: Vec<SessionTraceStep>,
    pub proposals: Vec<ProposalSummary>,
    /// Questions the scenario could not answer.
    pub needs_info: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    pub mismatches: Vec<Mismatch>,
    /// Most similar prior cases when the session started.
    pub similar_cases: Vec<SimilarCase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub messages: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl RunTrace {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("traces serialize");
        text.push('\n');
        text
    }
}

pub struct HeadlessRun {
    pub trace: RunTrace,
    pub supervisor: Supervisor,
}

/// Reads a scenario file, reporting JSON and schema errors with their line.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, HeadlessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HeadlessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text).map_err(|e| HeadlessError::Scenario {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Runs `scenario` to completion or to the first point where a user would be
/// needed.
pub fn run_scenario(engine: &Engine, scenario: &Scenario, options: &RunOptions) -> Result<HeadlessRun, HeadlessError> {
    let similar_cases = match &engine.cases {
        Some(cases) if options.similar_cases > 0 => {
            let base = cases.read().unwrap_or_else(|p| p.into_inner());
            let query = CaseProfile::new(scenario.findings.clone(), engine.pack.manifest.keywords.iter().cloned());
            base.retrieve(&query, options.similar_cases, &engine.config.weights)
                .into_iter()
                .map(|(case, score)| SimilarCase {
                    case_id: case.id.clone(),
                    score,
                })
                .collect()
        }
        _ => Vec::new(),
    };

    let mut supervisor = engine.supervisor();
    supervisor.start(scenario.findings.clone())?;
    let mut needs_info = Vec::new();
    while !supervisor.state().is_closed() {
        let unanswered: Vec<String> = supervisor.state().memory.pending_questions().iter().cloned().collect();
        if !unanswered.is_empty() {
            needs_info = unanswered;
            break;
        }
        let pending: Vec<String> = supervisor
            .state()
            .pending_proposals()
            .map(|p| p.proposal.proposal_id.clone())
            .collect();
        let Some(first) = pending.first() else {
            break;
        };
        match scenario.policy {
            ValidationPolicy::ValidateFirst => {
                supervisor.validate(first)?;
            }
            ValidationPolicy::RejectAll => {
                for id in &pending {
                    supervisor.reject(id, Some("rejected by scenario policy".into()))?;
                }
            }
        }
    }

    let state = supervisor.state();
    let mismatches: Vec<Mismatch> = scenario
        .expected
        .iter()
        .filter_map(|(stage, expected)| {
            let actual = state.memory.stage_result(*stage);
            (actual != Some(expected.as_str())).then(|| Mismatch {
                stage: *stage,
                expected: expected.clone(),
                actual: actual.map(str::to_string),
            })
        })
        .collect();
    let outcome = match state.status() {
        SessionStatus::Completed if mismatches.is_empty() => RunOutcome::Completed,
        SessionStatus::Completed => RunOutcome::Mismatch,
        SessionStatus::Failed => RunOutcome::Failed,
        _ if !needs_info.is_empty() => RunOutcome::NeedsInfo,
        _ => RunOutcome::Failed,
    };
    let trace = RunTrace {
        scenario: scenario.id.clone(),
        pack: engine.pack.id().to_string(),
        reconstructed: scenario.reconstructed,
        outcome,
        status: state.status(),
        components: state.components.clone(),
        trace: state.trace.clone(),
        proposals: state
            .proposals
            .iter()
            .map(|p| ProposalSummary {
                proposal_id: p.proposal.proposal_id.clone(),
                agent: p.agent.clone(),
                stage: p.proposal.stage,
                value: p.proposal.value.clone(),
                case_id: match &p.proposal.origin {
                    ProposalOrigin::CaseBased { case_id, .. } => Some(case_id.clone()),
                    ProposalOrigin::Automaton { .. } => None,
                },
                status: p.status,
            })
            .collect(),
        needs_info,
        failure: state.failure.clone(),
        mismatches,
        similar_cases,
        case_id: state.case_id.clone(),
        messages: supervisor.log().len(),
        seed: options.seed,
        generated_at: (!options.no_timestamps).then(|| Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)),
    };
    Ok(HeadlessRun { trace, supervisor })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::casebase::CaseBase;
    use crate::domain::DomainPack;
    use crate::memory::FindingValue;

    fn engine() -> Engine {
        Engine::new(Arc::new(DomainPack::builtin())).with_cases(CaseBase::in_memory().shared())
    }

    fn options() -> RunOptions {
        RunOptions {
            no_timestamps: true,
            seed: None,
            similar_cases: 3,
        }
    }

    fn values(trace: &RunTrace) -> Vec<&str> {
        trace.components.values().map(|c| c.value.as_str()).collect()
    }

    #[test]
    fn shipped_scenarios_complete_with_expected_results() {
        let engine = engine();
        let expected = [
            ("viral", ["Δ1", "Π1", "Θ1", "SΘ"]),
            ("benign-bacterial", ["Δ3", "Π3", "Θ3", "SΘ"]),
            ("severe-bacterial", ["Δ5", "Π5", "Θ5", "SΘ"]),
        ];
        for (id, results) in expected {
            let scenario = engine.pack.scenario(id).unwrap().clone();
            let run = run_scenario(&engine, &scenario, &options()).unwrap();
            assert_eq!(run.trace.outcome, RunOutcome::Completed, "{id}");
            assert_eq!(values(&run.trace), results);
            assert!(run.trace.case_id.is_some());
        }
    }

    #[test]
    fn rerun_retrieves_the_retained_case_first() {
        let engine = engine();
        let scenario = engine.pack.scenario("severe-bacterial").unwrap().clone();
        let first = run_scenario(&engine, &scenario, &options()).unwrap();
        let second = run_scenario(&engine, &scenario, &options()).unwrap();
        assert_eq!(
            second.trace.similar_cases[0],
            SimilarCase {
                case_id: first.trace.case_id.clone().unwrap(),
                score: 1.0
            }
        );
        let suggested: Vec<&str> = second
            .trace
            .proposals
            .iter()
            .filter_map(|p| p.case_id.as_deref())
            .collect();
        assert_eq!(suggested, ["case-000001"; 4]);
        assert_eq!(second.trace.case_id.as_deref(), Some("case-000002"));
    }

    #[test]
    fn missing_so1_needs_info() {
        let engine = engine();
        let mut scenario = engine.pack.scenario("viral").unwrap().clone();
        scenario.findings.remove("SO1");
        let run = run_scenario(&engine, &scenario, &options()).unwrap();
        assert_eq!(run.trace.outcome, RunOutcome::NeedsInfo);
        assert_eq!(run.trace.needs_info, ["SO1"]);
        assert_eq!(run.trace.outcome.exit_code(), 2);
        assert!(run.trace.case_id.is_none());
    }

    #[test]
    fn reject_all_fails_without_a_solution() {
        let engine = engine();
        let mut scenario = engine.pack.scenario("viral").unwrap().clone();
        scenario.policy = ValidationPolicy::RejectAll;
        let run = run_scenario(&engine, &scenario, &options()).unwrap();
        assert_eq!(run.trace.outcome, RunOutcome::Failed);
        assert_eq!(run.trace.failure, Some(StageFailure::NoSolution));
    }

    #[test]
    fn wrong_expectation_is_a_mismatch() {
        let engine = engine();
        let mut scenario = engine.pack.scenario("viral").unwrap().clone();
        scenario.expected.insert(StageKind::Diagnosis, "Δ3".into());
        let run = run_scenario(&engine, &scenario, &options()).unwrap();
        assert_eq!(run.trace.outcome, RunOutcome::Mismatch);
        assert_eq!(
            run.trace.mismatches,
            [Mismatch {
                stage: StageKind::Diagnosis,
                expected: "Δ3".into(),
                actual: Some("Δ1".into())
            }]
        );
    }

    #[test]
    fn traces_are_reproducible_without_timestamps() {
        let scenario = DomainPack::builtin().scenario("benign-bacterial").unwrap().clone();
        let a = run_scenario(&engine(), &scenario, &options()).unwrap();
        let b = run_scenario(&engine(), &scenario, &options()).unwrap();
        assert_eq!(a.trace.to_json(), b.trace.to_json());
        let stamped = run_scenario(&engine(), &scenario, &RunOptions::default()).unwrap();
        assert!(stamped.trace.generated_at.is_some());
    }

    #[test]
    fn absent_so1_fails_stuck() {
        let engine = engine();
        let mut scenario = engine.pack.scenario("viral").unwrap().clone();
        scenario.findings.insert("SO1".into(), FindingValue::Absent);
        let run = run_scenario(&engine, &scenario, &options()).unwrap();
        assert_eq!(run.trace.outcome, RunOutcome::Failed);
        assert!(matches!(run.trace.failure, Some(StageFailure::Stuck { .. })));
    }

    #[test]
    fn scenario_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\n  \"id\": \"x\",\n  \"findings\": {\"SO1\": \"maybe\"}\n}\n").unwrap();
        match load_scenario(&path) {
            Err(HeadlessError::Scenario { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {:?}", other.map(|s| s.id)),
        }
    }
}
