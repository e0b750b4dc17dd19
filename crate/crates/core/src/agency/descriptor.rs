use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stage::StageKind;

/// Default minimum specialization degree for accepting a task.
pub const DEFAULT_ACCEPTANCE_THRESHOLD: f64 = 0.5;
/// Default per-stage task budget: 300 s.
pub const DEFAULT_DEADLINE_MS: u64 = 300_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KnowledgeModel {
    RuleBased,
    CaseBased,
    ObjectDistance,
    Epidemiological,
    Ontological,
}

impl KnowledgeModel {
    pub fn name(self) -> &'static str {
        match self {
            KnowledgeModel::RuleBased => "RuleBased",
            KnowledgeModel::CaseBased => "CaseBased",
            KnowledgeModel::ObjectDistance => "ObjectDistance",
            KnowledgeModel::Epidemiological => "Epidemiological",
            KnowledgeModel::Ontological => "Ontological",
        }
    }
}

/// One level of the agent type hierarchy: the general clinical type, its
/// knowledge-model specialization, then its domain specialization.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentType {
    Tacg,
    Tamc(KnowledgeModel),
    Tasdc(String),
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentType::Tacg => f.write_str("TACG"),
            AgentType::Tamc(model) => write!(f, "TAMC:{}", model.name()),
            AgentType::Tasdc(domain) => write!(f, "TASDC:{domain}"),
        }
    }
}

impl FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "TACG" {
            return Ok(AgentType::Tacg);
        }
        if let Some(model) = s.strip_prefix("TAMC:") {
            let model = [
                KnowledgeModel::RuleBased,
                KnowledgeModel::CaseBased,
                KnowledgeModel::ObjectDistance,
                KnowledgeModel::Epidemiological,
                KnowledgeModel::Ontological,
            ]
            .into_iter()
            .find(|m| m.name() == model)
            .ok_or_else(|| format!("unknown knowledge model `{model}`"))?;
            return Ok(AgentType::Tamc(model));
        }
        match s.strip_prefix("TASDC:") {
            Some(domain) if !domain.is_empty() => Ok(AgentType::Tasdc(domain.to_string())),
            _ => Err(format!("unknown agent type `{s}`")),
        }
    }
}

impl Serialize for AgentType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskNature {
    /// Reach a terminal state of the stage automaton.
    StageDecision,
    /// Answer a question without proposing a stage result.
    Consultation,
}

/// Capability predicate parameters an agent reasons about when a task is
/// announced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflexiveProfile {
    /// In [0, 1].
    pub specialization: f64,
    pub natures: BTreeSet<TaskNature>,
    pub knowledge_bases: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: String,
    pub lineage: Vec<AgentType>,
    pub stage_competencies: BTreeSet<StageKind>,
    pub knowledge_model: KnowledgeModel,
    pub reflexive_profile: ReflexiveProfile,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DescriptorError {
    #[error("agent `{0}`: lineage must start with TACG")]
    LineageRoot(String),
    #[error("agent `{id}`: specialization degree {degree} is outside [0, 1]")]
    Specialization { id: String, degree: f64 },
    #[error("agent `{0}`: lineage knowledge model differs from the declared one")]
    LineageModel(String),
}

impl AgentDescriptor {
    /// Descriptor with lineage TACG → TAMC(model) → TASDC(domain), or
    /// TACG → TAMC(model) for a domain-independent agent.
    pub fn new(
        id: impl Into<String>,
        model: KnowledgeModel,
        domain: Option<&str>,
        stages: impl IntoIterator<Item = StageKind>,
        specialization: f64,
        knowledge_bases: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut lineage = vec![AgentType::Tacg, AgentType::Tamc(model)];
        if let Some(domain) = domain {
            lineage.push(AgentType::Tasdc(domain.to_string()));
        }
        AgentDescriptor {
            id: id.into(),
            lineage,
            stage_competencies: stages.into_iter().collect(),
            knowledge_model: model,
            reflexive_profile: ReflexiveProfile {
                specialization,
                natures: BTreeSet::from([TaskNature::StageDecision]),
                knowledge_bases: knowledge_bases.into_iter().collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.lineage.first() != Some(&AgentType::Tacg) {
            return Err(DescriptorError::LineageRoot(self.id.clone()));
        }
        if let Some(AgentType::Tamc(model)) = self.lineage.get(1) {
            if *model != self.knowledge_model {
                return Err(DescriptorError::LineageModel(self.id.clone()));
            }
        }
        let degree = self.reflexive_profile.specialization;
        if !(0.0..=1.0).contains(&degree) {
            return Err(DescriptorError::Specialization {
                id: self.id.clone(),
                degree,
            });
        }
        Ok(())
    }

    pub fn domain(&self) -> Option<&str> {
        self.lineage.iter().find_map(|t| match t {
            AgentType::Tasdc(domain) => Some(domain.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    /// Drive the automaton `automaton` to one of its terminal states.
    ReachTerminal {
        automaton: String,
    },
    Question {
        text: String,
    },
}

impl Goal {
    pub fn nature(&self) -> TaskNature {
        match self {
            Goal::ReachTerminal { .. } => TaskNature::StageDecision,
            Goal::Question { .. } => TaskNature::Consultation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub stage: StageKind,
    pub goal: Goal,
    /// Budget in milliseconds of session time, counted from `announced_at`.
    pub deadline_ms: u64,
    pub announced_at: u64,
    /// Working-memory version when the task was announced.
    pub context_version: u64,
}

impl Task {
    pub fn expires_at(&self) -> u64 {
        self.announced_at.saturating_add(self.deadline_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DeclineReason {
    StageMismatch,
    UnsupportedNature,
    KnowledgeUnavailable { knowledge_base: String },
    InsufficientSpecialization { degree: f64, threshold: f64 },
}

impl fmt::Display for DeclineReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeclineReason::StageMismatch => f.write_str("stage mismatch"),
            DeclineReason::UnsupportedNature => f.write_str("unsupported task nature"),
            DeclineReason::KnowledgeUnavailable { knowledge_base } => {
                write!(f, "knowledge unavailable: {knowledge_base}")
            }
            DeclineReason::InsufficientSpecialization { degree, threshold } => {
                write!(f, "specialization {degree} below threshold {threshold}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum CapabilityAnswer {
    Accept,
    Decline(DeclineReason),
}

/// Decides whether `agent` takes `task`. Criteria are checked in order and
/// the first failing one is reported.
pub fn evaluate_capability(
    agent: &AgentDescriptor,
    task: &Task,
    registered_knowledge: &BTreeSet<String>,
    threshold: f64,
) -> CapabilityAnswer {
    let profile = &agent.reflexive_profile;
    if !agent.stage_competencies.contains(&task.stage) {
        return CapabilityAnswer::Decline(DeclineReason::StageMismatch);
    }
    if !profile.natures.contains(&task.goal.nature()) {
        return CapabilityAnswer::Decline(DeclineReason::UnsupportedNature);
    }
    if let Some(missing) = profile
        .knowledge_bases
        .iter()
        .find(|kb| !registered_knowledge.contains(*kb))
    {
        return CapabilityAnswer::Decline(DeclineReason::KnowledgeUnavailable {
            knowledge_base: missing.clone(),
        });
    }
    if profile.specialization < threshold {
        return CapabilityAnswer::Decline(DeclineReason::InsufficientSpecialization {
            degree: profile.specialization,
            threshold,
        });
    }
    CapabilityAnswer::Accept
}
