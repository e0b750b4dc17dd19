use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{Concept, ConceptId, OntologyError, OntologyGraph};
use crate::stage::StageKind;

/// Serves the common terminology of one clinical stage of one knowledge
/// domain to every specialized agent working on that stage.
#[derive(Debug)]
pub struct OntologyAgent {
    stage: StageKind,
    domain: String,
    graph: OntologyGraph,
}

impl OntologyAgent {
    pub fn id(&self) -> String {
        format!("ontology:{}:{}", self.domain, self.stage)
    }

    pub fn stage(&self) -> StageKind {
        self.stage
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn graph(&self) -> &OntologyGraph {
        &self.graph
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.graph.concept(id)
    }

    /// Display label for `id`, or `None` when the stage does not serve it.
    pub fn label_of(&self, id: &str) -> Option<&str> {
        self.graph.concept(id).map(|c| c.label.as_str())
    }

    pub fn lookup_term(&self, label: &str) -> Result<Option<ConceptId>, OntologyError> {
        self.graph.lookup_term(label)
    }
}

/// Lazily instantiates at most one [`OntologyAgent`] per (stage, domain).
#[derive(Debug, Default)]
pub struct OntologyAgents {
    agents: Mutex<BTreeMap<(StageKind, String), Arc<OntologyAgent>>>,
    instantiated: Mutex<usize>,
}

impl OntologyAgents {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the agent for (stage, domain), creating it from `source` on
    /// first use. The served graph is the stage restriction of `source` with
    /// its own extrapolation rules applied.
    pub fn get_or_create(&self, stage: StageKind, domain: &str, source: &OntologyGraph) -> Arc<OntologyAgent> {
        let mut agents = self.agents.lock().expect("ontology registry poisoned");
        agents
            .entry((stage, domain.to_string()))
            .or_insert_with(|| {
                *self.instantiated.lock().expect("ontology registry poisoned") += 1;
                Arc::new(OntologyAgent {
                    stage,
                    domain: domain.to_string(),
                    graph: source.restricted_to(stage).extrapolated(),
                })
            })
            .clone()
    }

    pub fn get(&self, stage: StageKind, domain: &str) -> Option<Arc<OntologyAgent>> {
        self.agents
            .lock()
            .expect("ontology registry poisoned")
            .get(&(stage, domain.to_string()))
            .cloned()
    }

    /// Number of agents ever created.
    pub fn instantiated(&self) -> usize {
        *self.instantiated.lock().expect("ontology registry poisoned")
    }
}
