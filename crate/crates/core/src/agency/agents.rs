use std::sync::Arc;

use super::descriptor::{AgentDescriptor, KnowledgeModel, Task};
use super::message::{Draft, Info, Proposal, ProposalOrigin};
use super::state::SupervisorState;
use crate::automaton::{Automaton, StepOutcome};
use crate::casebase::{reuse, CaseProfile, SharedCaseBase, SimilarityWeights};
use crate::domain::DomainPack;
use crate::ontology::OntologyAgent;
use crate::stage::StageKind;

/// Knowledge-base id of a pack's rules and tables.
pub fn pack_knowledge(pack: &str) -> String {
    format!("pack:{pack}")
}

pub fn ontology_knowledge(pack: &str) -> String {
    format!("ontology:{pack}")
}

pub const CASEBASE_KNOWLEDGE: &str = "casebase";

/// Read-only view given to an agent at a scheduling point.
pub struct AgentContext<'a> {
    pub task: &'a Task,
    pub state: &'a SupervisorState,
    pub now: u64,
    /// Terminology of the task's stage.
    pub ontology: Option<&'a OntologyAgent>,
}

impl<'a> AgentContext<'a> {
    pub fn conversation(&self) -> &str {
        &self.task.id
    }

    fn last_value_proposed_by(&self, agent: &str) -> Option<&'a str> {
        self.state
            .proposals_by(agent, &self.task.id)
            .last()
            .map(|p| p.proposal.value.as_str())
    }

    fn has_informed(&self, agent: &str) -> bool {
        self.state
            .task(&self.task.id)
            .is_some_and(|t| t.informants.contains(agent))
    }
}

/// A specialized clinical agent. Agents keep no private state: whatever they
/// did before is visible in the supervisor state, so a session rebuilt from
/// its log resumes exactly.
pub trait Agent: Send + Sync {
    fn descriptor(&self) -> &AgentDescriptor;

    /// Messages to send at this scheduling point; empty when idle.
    fn act(&self, ctx: &AgentContext<'_>) -> Vec<Draft>;
}

/// Drives a stage automaton over the working memory: queries the user for
/// missing signs and proposes the terminal state it reaches.
pub struct AutomatonAgent {
    descriptor: AgentDescriptor,
    automaton: Arc<Automaton>,
}

impl AutomatonAgent {
    pub fn new(pack: &DomainPack, stage: StageKind, specialization: f64) -> Option<Self> {
        let automaton = pack.automaton(stage)?.clone();
        let descriptor = AgentDescriptor::new(
            format!("automaton:{}", stage.symbol()),
            KnowledgeModel::RuleBased,
            Some(pack.id()),
            [stage],
            specialization,
            [pack_knowledge(pack.id())],
        );
        Some(AutomatonAgent {
            descriptor,
            automaton: Arc::new(automaton),
        })
    }

    pub fn with_descriptor(descriptor: AgentDescriptor, automaton: Automaton) -> Self {
        AutomatonAgent {
            descriptor,
            automaton: Arc::new(automaton),
        }
    }
}

impl Agent for AutomatonAgent {
    fn descriptor(&self) -> &AgentDescriptor {
        &self.descriptor
    }

    fn act(&self, ctx: &AgentContext<'_>) -> Vec<Draft> {
        let me = self.descriptor.id.as_str();
        let memory = &ctx.state.memory;
        let run = match self.automaton.run_to_terminal(memory) {
            Ok(run) => run,
            Err(e) if !ctx.has_informed(me) => return vec![Draft::inform(Info::AgentError { message: e.to_string() })],
            Err(_) => return Vec::new(),
        };
        match run.outcome {
            StepOutcome::Terminal => {
                if ctx.last_value_proposed_by(me) == Some(run.final_state.as_str()) {
                    return Vec::new();
                }
                let label = ctx
                    .ontology
                    .and_then(|o| o.label_of(&run.final_state))
                    .map(str::to_string);
                vec![Draft::propose(Proposal {
                    proposal_id: String::new(),
                    stage: ctx.task.stage,
                    value: run.final_state,
                    label,
                    detail: None,
                    trace: run.trace,
                    origin: ProposalOrigin::Automaton {
                        automaton: self.automaton.id.clone(),
                    },
                })]
            }
            StepOutcome::NeedsInfo { signs } => signs
                .iter()
                .filter(|s| !memory.is_pending(s))
                .map(|s| Draft::query(s))
                .collect(),
            StepOutcome::Stuck => {
                let reported = ctx
                    .state
                    .task(ctx.conversation())
                    .is_some_and(|t| t.stuck.iter().any(|s| s.agent == me && s.state == run.final_state));
                if reported {
                    Vec::new()
                } else {
                    vec![Draft::inform(Info::Stuck {
                        state: run.final_state,
                        trace: run.trace,
                    })]
                }
            }
            StepOutcome::Advanced { .. } => Vec::new(),
        }
    }
}

/// Proposes the stage component of the most similar prior case when the
/// similarity reaches the suggestion threshold and the case agrees with every
/// result already validated in this session.
pub struct CaseBasedAgent {
    descriptor: AgentDescriptor,
    cases: SharedCaseBase,
    keywords: Vec<String>,
    weights: SimilarityWeights,
    threshold: f64,
}

impl CaseBasedAgent {
    pub fn new(
        pack: &DomainPack,
        cases: SharedCaseBase,
        weights: SimilarityWeights,
        threshold: f64,
        specialization: f64,
    ) -> Self {
        CaseBasedAgent {
            descriptor: AgentDescriptor::new(
                "case-based",
                KnowledgeModel::CaseBased,
                Some(pack.id()),
                StageKind::CLINICAL,
                specialization,
                [CASEBASE_KNOWLEDGE.to_string()],
            ),
            cases,
            keywords: pack.manifest.keywords.clone(),
            weights,
            threshold,
        }
    }
}

impl Agent for CaseBasedAgent {
    fn descriptor(&self) -> &AgentDescriptor {
        &self.descriptor
    }

    fn act(&self, ctx: &AgentContext<'_>) -> Vec<Draft> {
        let me = self.descriptor.id.as_str();
        let memory = &ctx.state.memory;
        let stage = ctx.task.stage;
        let query = CaseProfile::new(memory.known_findings(), self.keywords.iter().cloned());
        let base = match self.cases.read() {
            Ok(base) => base,
            Err(poisoned) => poisoned.into_inner(),
        };
        let Some((case, score)) = base.retrieve(&query, 1, &self.weights).into_iter().next() else {
            return Vec::new();
        };
        let Some(suggestion) = reuse(case, score, memory, self.threshold) else {
            return Vec::new();
        };
        let Some(component) = case.component(stage) else {
            return Vec::new();
        };
        let consistent = StageKind::CLINICAL
            .iter()
            .take_while(|s| **s != stage)
            .all(|s| memory.stage_result(*s) == case.component(*s).map(|c| c.value.as_str()));
        let already = ctx.state.proposals_by(me, ctx.conversation()).last().is_some_and(|p| {
            p.proposal.value == component.value
                && matches!(&p.proposal.origin, ProposalOrigin::CaseBased { case_id, .. } if *case_id == case.id)
        });
        if !consistent || already {
            return Vec::new();
        }
        let [start, end] = component.trace;
        let trace = case
            .trace
            .get(start..end)
            .unwrap_or_default()
            .iter()
            .map(|s| s.step.clone())
            .collect();
        vec![Draft::propose(Proposal {
            proposal_id: String::new(),
            stage,
            value: component.value.clone(),
            label: component.label.clone(),
            detail: component.detail.clone(),
            trace,
            origin: ProposalOrigin::CaseBased {
                case_id: suggestion.case_id,
                score: suggestion.score,
                differences: suggestion.differences,
            },
        })]
    }
}

/// Attribute names the epidemiology agent reports.
pub const EPIDEMIOLOGY_ATTRIBUTES: [&str; 2] = ["incidence", "prevalence"];

/// Reports the incidence and prevalence attributes declared in the ontology
/// for the validated diagnosis. Never proposes.
pub struct EpidemiologyAgent {
    descriptor: AgentDescriptor,
}

impl EpidemiologyAgent {
    pub fn new(pack: &DomainPack, specialization: f64) -> Self {
        EpidemiologyAgent {
            descriptor: AgentDescriptor::new(
                "epidemiology",
                KnowledgeModel::Epidemiological,
                Some(pack.id()),
                [StageKind::Prognosis],
                specialization,
                [ontology_knowledge(pack.id())],
            ),
        }
    }
}

impl Agent for EpidemiologyAgent {
    fn descriptor(&self) -> &AgentDescriptor {
        &self.descriptor
    }

    fn act(&self, ctx: &AgentContext<'_>) -> Vec<Draft> {
        if ctx.has_informed(&self.descriptor.id) {
            return Vec::new();
        }
        let Some(diagnosis) = ctx.state.memory.stage_result(StageKind::Diagnosis) else {
            return Vec::new();
        };
        let attributes = ctx
            .ontology
            .and_then(|o| o.concept(diagnosis))
            .map(|c| {
                c.attributes
                    .iter()
                    .filter(|(name, _)| EPIDEMIOLOGY_ATTRIBUTES.contains(&name.as_str()))
                    .map(|(name, value)| (name.clone(), value.clone()))
                    .collect()
            })
            .unwrap_or_default();
        vec![Draft::inform(Info::Epidemiology {
            diagnosis: diagnosis.to_string(),
            attributes,
        })]
    }
}
