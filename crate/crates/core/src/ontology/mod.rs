//! Typed concept graph with a closed relation taxonomy, sign categories and
//! a non-destructive forward-chaining extrapolation engine.

mod agent;
mod document;
mod rules;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stage::StageKind;

pub use agent::{OntologyAgent, OntologyAgents};
pub use document::{ConceptDoc, OntologyDocument, PatternDoc, RelationDoc, RuleDoc};
pub use rules::{ExtrapolationRule, RelationPattern, Term};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Self {
        ConceptId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for ConceptId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ConceptId {
    fn from(s: &str) -> Self {
        ConceptId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    Class,
    Individual,
}

/// Attribute literal attached to a concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Literal {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Literal::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Concept {
    pub id: ConceptId,
    pub label: String,
    pub kind: ConceptKind,
    /// Stages this concept is served for. Empty means every stage.
    pub stage_scope: BTreeSet<StageKind>,
    pub attributes: BTreeMap<String, Literal>,
}

impl Concept {
    pub fn class(id: &str, label: &str) -> Self {
        Concept {
            id: ConceptId::new(id),
            label: label.to_string(),
            kind: ConceptKind::Class,
            stage_scope: BTreeSet::new(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn served_for(&self, stage: StageKind) -> bool {
        self.stage_scope.is_empty() || self.stage_scope.contains(&stage)
    }

    /// The sign category, when the concept is tagged as a clinical sign.
    pub fn sign_category(&self) -> Option<SignCategory> {
        self.attributes
            .get(SIGN_CATEGORY_ATTRIBUTE)
            .and_then(Literal::as_text)
            .and_then(|s| s.parse().ok())
    }
}

/// Attribute name that tags a concept as a clinical sign.
pub const SIGN_CATEGORY_ATTRIBUTE: &str = "sign_category";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    IsA,
    HasA,
    AssociatedWith,
    PhysicallyRelatedTo,
    FunctionallyRelatedTo,
    TemporallyRelatedTo,
    ConceptuallyRelatedTo,
    ComposedOf,
    CausedBy,
}

impl RelationKind {
    pub const ALL: [RelationKind; 9] = [
        RelationKind::IsA,
        RelationKind::HasA,
        RelationKind::AssociatedWith,
        RelationKind::PhysicallyRelatedTo,
        RelationKind::FunctionallyRelatedTo,
        RelationKind::TemporallyRelatedTo,
        RelationKind::ConceptuallyRelatedTo,
        RelationKind::ComposedOf,
        RelationKind::CausedBy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::IsA => "is_a",
            RelationKind::HasA => "has_a",
            RelationKind::AssociatedWith => "associated_with",
            RelationKind::PhysicallyRelatedTo => "physically_related_to",
            RelationKind::FunctionallyRelatedTo => "functionally_related_to",
            RelationKind::TemporallyRelatedTo => "temporally_related_to",
            RelationKind::ConceptuallyRelatedTo => "conceptually_related_to",
            RelationKind::ComposedOf => "composed_of",
            RelationKind::CausedBy => "caused_by",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL.into_iter().find(|kind| kind.as_str() == s).ok_or(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "rule")]
pub enum Provenance {
    Asserted,
    Derived(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub source: ConceptId,
    pub kind: RelationKind,
    pub target: ConceptId,
    pub provenance: Provenance,
}

impl Relation {
    pub fn triple(&self) -> (ConceptId, RelationKind, ConceptId) {
        (self.source.clone(), self.kind, self.target.clone())
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.kind, self.target)
    }
}

/// Clinical sign category: pathognomonic, obligatory, evocative, accessory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignCategory {
    SP,
    SO,
    SE,
    SA,
}

impl FromStr for SignCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SP" => Ok(SignCategory::SP),
            "SO" => Ok(SignCategory::SO),
            "SE" => Ok(SignCategory::SE),
            "SA" => Ok(SignCategory::SA),
            _ => Err(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("ontology document is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("relations[{index}] {triple}: unknown relation kind `{kind}`")]
    UnknownRelationKind { index: usize, kind: String, triple: String },
    #[error("{context}: reference to undeclared concept `{concept}`")]
    DanglingConceptReference { context: String, concept: String },
    #[error("concepts[{index}]: duplicate concept id `{id}`")]
    DuplicateConceptId { index: usize, id: String },
    #[error("relations[{index}]: duplicate relation {triple}")]
    DuplicateRelation { index: usize, triple: String },
    #[error("concepts[{index}]: concept `{id}` has an empty label")]
    EmptyLabel { index: usize, id: String },
    #[error("concept `{concept}`: invalid sign category `{value}`")]
    InvalidSignCategory { concept: String, value: String },
    #[error("is_a cycle through {}", .cycle.join(" -> "))]
    IsACycle { cycle: Vec<String> },
    #[error("rule `{rule}`: consequent variable `{variable}` is not bound by any antecedent")]
    UnboundVariable { rule: String, variable: String },
    #[error("rule `{rule}`: {reason}")]
    MalformedRule { rule: String, reason: String },
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("label `{label}` is shared by concepts {}", .concepts.join(", "))]
    AmbiguousLabel { label: String, concepts: Vec<String> },
}

/// Concept graph. Immutable once built; extrapolation returns a new value.
#[derive(Clone, Debug, Default)]
pub struct OntologyGraph {
    concepts: BTreeMap<ConceptId, Concept>,
    relations: Vec<Relation>,
    triples: BTreeSet<(ConceptId, RelationKind, ConceptId)>,
    rules: Vec<ExtrapolationRule>,
}

impl PartialEq for OntologyGraph {
    fn eq(&self, other: &Self) -> bool {
        let mut mine = self.relations.clone();
        let mut theirs = other.relations.clone();
        mine.sort();
        theirs.sort();
        self.concepts == other.concepts && mine == theirs && self.rules == other.rules
    }
}

impl OntologyGraph {
    /// Builds a graph from already validated parts. Use [`load_ontology`]
    /// for documents.
    pub fn build(
        concepts: Vec<Concept>,
        relations: Vec<(ConceptId, RelationKind, ConceptId)>,
        rules: Vec<ExtrapolationRule>,
    ) -> Result<Self, OntologyError> {
        let mut graph = OntologyGraph::default();
        for (index, concept) in concepts.into_iter().enumerate() {
            if concept.label.trim().is_empty() {
                return Err(OntologyError::EmptyLabel {
                    index,
                    id: concept.id.to_string(),
                });
            }
            if let Some(value) = concept.attributes.get(SIGN_CATEGORY_ATTRIBUTE) {
                if concept.sign_category().is_none() {
                    return Err(OntologyError::InvalidSignCategory {
                        concept: concept.id.to_string(),
                        value: value.to_string(),
                    });
                }
            }
            if graph.concepts.contains_key(&concept.id) {
                return Err(OntologyError::DuplicateConceptId {
                    index,
                    id: concept.id.to_string(),
                });
            }
            graph.concepts.insert(concept.id.clone(), concept);
        }
        for (index, (source, kind, target)) in relations.into_iter().enumerate() {
            for end in [&source, &target] {
                if !graph.concepts.contains_key(end) {
                    return Err(OntologyError::DanglingConceptReference {
                        context: format!("relations[{index}] ({source}, {kind}, {target})"),
                        concept: end.to_string(),
                    });
                }
            }
            let triple = (source.clone(), kind, target.clone());
            if graph.triples.contains(&triple) {
                return Err(OntologyError::DuplicateRelation {
                    index,
                    triple: format!("({source}, {kind}, {target})"),
                });
            }
            graph.insert(Relation {
                source,
                kind,
                target,
                provenance: Provenance::Asserted,
            });
        }
        if let Some(cycle) = graph.find_isa_cycle() {
            return Err(OntologyError::IsACycle {
                cycle: cycle.into_iter().map(|c| c.to_string()).collect(),
            });
        }
        let mut rule_ids = BTreeSet::new();
        for rule in &rules {
            rule.validate(&graph)?;
            if !rule_ids.insert(rule.id.clone()) {
                return Err(OntologyError::MalformedRule {
                    rule: rule.id.clone(),
                    reason: "duplicate rule id".into(),
                });
            }
        }
        graph.rules = rules;
        Ok(graph)
    }

    fn insert(&mut self, relation: Relation) -> bool {
        if self.triples.insert(relation.triple()) {
            self.relations.push(relation);
            true
        } else {
            false
        }
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn rules(&self) -> &[ExtrapolationRule] {
        &self.rules
    }

    pub fn asserted(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(|r| r.provenance == Provenance::Asserted)
    }

    pub fn derived(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(|r| r.provenance != Provenance::Asserted)
    }

    pub fn contains(&self, source: &str, kind: RelationKind, target: &str) -> bool {
        self.triples
            .contains(&(ConceptId::new(source), kind, ConceptId::new(target)))
    }

    /// Outgoing and incoming relations touching `id`.
    pub fn relations_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Relation> + 'a {
        self.relations
            .iter()
            .filter(move |r| r.source.as_str() == id || r.target.as_str() == id)
    }

    fn targets<'a>(&'a self, source: &'a str, kind: RelationKind) -> impl Iterator<Item = &'a ConceptId> + 'a {
        self.relations
            .iter()
            .filter(move |r| r.kind == kind && r.source.as_str() == source)
            .map(|r| &r.target)
    }

    fn require(&self, id: &str) -> Result<&Concept, OntologyError> {
        self.concepts
            .get(id)
            .ok_or_else(|| OntologyError::UnknownConcept(id.to_string()))
    }

    fn find_isa_cycle(&self) -> Option<Vec<ConceptId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut marks: BTreeMap<&ConceptId, Mark> = BTreeMap::new();
        for start in self.concepts.keys() {
            if marks.contains_key(start) {
                continue;
            }
            // Iterative DFS keeping the open path for cycle reporting.
            let mut path: Vec<&ConceptId> = vec![start];
            let mut stack: Vec<Vec<&ConceptId>> = vec![self.targets(start.as_str(), RelationKind::IsA).collect()];
            marks.insert(start, Mark::Open);
            while let Some(pending) = stack.last_mut() {
                match pending.pop() {
                    Some(next) => match marks.get(next) {
                        Some(Mark::Open) => {
                            let at = path.iter().position(|c| *c == next).unwrap_or(0);
                            let mut cycle: Vec<ConceptId> = path[at..].iter().map(|c| (*c).clone()).collect();
                            cycle.push(next.clone());
                            return Some(cycle);
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(next, Mark::Open);
                            path.push(next);
                            stack.push(self.targets(next.as_str(), RelationKind::IsA).collect());
                        }
                    },
                    None => {
                        stack.pop();
                        if let Some(done) = path.pop() {
                            marks.insert(done, Mark::Done);
                        }
                    }
                }
            }
        }
        None
    }

    /// Transitive IsA ancestors of `concept`, nearest first. The order is
    /// topological: every ancestor comes after all of its own descendants in
    /// the result. Ties are broken by id.
    pub fn isa_ancestors(&self, concept: &str) -> Result<Vec<ConceptId>, OntologyError> {
        let start = &self.require(concept)?.id;
        // Collect the reachable subgraph.
        let mut reachable: BTreeSet<&ConceptId> = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            for parent in self.targets(node.as_str(), RelationKind::IsA) {
                if parent != start && reachable.insert(parent) {
                    queue.push_back(parent);
                }
            }
        }
        // Kahn's algorithm over the reachable subgraph, releasing nodes by
        // longest distance from `start`.
        let mut indegree: BTreeMap<&ConceptId, usize> = reachable.iter().map(|c| (*c, 0)).collect();
        for node in reachable.iter().copied().chain([start]) {
            for parent in self.targets(node.as_str(), RelationKind::IsA) {
                if let Some(d) = indegree.get_mut(parent) {
                    *d += 1;
                }
            }
        }
        let mut depth: BTreeMap<&ConceptId, usize> = BTreeMap::new();
        let mut ready: BTreeSet<(usize, &ConceptId)> = BTreeSet::new();
        let mut ordered = Vec::with_capacity(reachable.len());
        let mut current = Some((0usize, start));
        while let Some((node_depth, node)) = current {
            if node != start {
                ordered.push(node.clone());
            }
            for parent in self.targets(node.as_str(), RelationKind::IsA) {
                if let Some(d) = indegree.get_mut(parent) {
                    let entry = depth.entry(parent).or_insert(0);
                    *entry = (*entry).max(node_depth + 1);
                    *d -= 1;
                    if *d == 0 {
                        ready.insert((*entry, parent));
                    }
                }
            }
            current = ready.pop_first();
        }
        if ordered.len() < reachable.len() {
            // Only derived IsA edges can close a cycle; append what is left.
            let placed: BTreeSet<ConceptId> = ordered.iter().cloned().collect();
            ordered.extend(reachable.into_iter().filter(|c| !placed.contains(*c)).cloned());
        }
        Ok(ordered)
    }

    /// Concepts reachable from `concept` through edges of `kind` within
    /// `max_depth` hops. The concept itself is never included.
    pub fn query_related(
        &self,
        concept: &str,
        kind: RelationKind,
        max_depth: usize,
    ) -> Result<BTreeSet<ConceptId>, OntologyError> {
        let start = &self.require(concept)?.id;
        let mut seen: BTreeSet<ConceptId> = BTreeSet::new();
        let mut frontier = vec![start];
        for _ in 0..max_depth {
            let mut next = Vec::new();
            for node in frontier {
                for target in self.targets(node.as_str(), kind) {
                    if target != start && seen.insert(target.clone()) {
                        next.push(target);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(seen)
    }

    /// Case-insensitive exact label match. `Ok(None)` when no concept has the
    /// label.
    pub fn lookup_term(&self, label: &str) -> Result<Option<ConceptId>, OntologyError> {
        let wanted = label.trim().to_lowercase();
        let matches: Vec<&Concept> = self
            .concepts
            .values()
            .filter(|c| c.label.trim().to_lowercase() == wanted)
            .collect();
        match matches.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(one.id.clone())),
            many => Err(OntologyError::AmbiguousLabel {
                label: label.to_string(),
                concepts: many.iter().map(|c| c.id.to_string()).collect(),
            }),
        }
    }

    /// Returns the sub-graph of concepts served for `stage`, keeping the
    /// relations whose endpoints both survive.
    pub fn restricted_to(&self, stage: StageKind) -> OntologyGraph {
        let concepts: BTreeMap<ConceptId, Concept> = self
            .concepts
            .iter()
            .filter(|(_, c)| c.served_for(stage))
            .map(|(id, c)| (id.clone(), c.clone()))
            .collect();
        let relations: Vec<Relation> = self
            .relations
            .iter()
            .filter(|r| concepts.contains_key(&r.source) && concepts.contains_key(&r.target))
            .cloned()
            .collect();
        OntologyGraph {
            triples: relations.iter().map(Relation::triple).collect(),
            concepts,
            relations,
            rules: self.rules.clone(),
        }
    }
}

/// Parses and validates an ontology document. The result holds asserted
/// relations only.
pub fn load_ontology(document: &str) -> Result<OntologyGraph, OntologyError> {
    let doc: OntologyDocument = serde_json::from_str(document)?;
    doc.into_graph()
}
