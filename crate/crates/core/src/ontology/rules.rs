use std::collections::{BTreeMap, BTreeSet};

use super::{ConceptId, OntologyError, OntologyGraph, Provenance, Relation, RelationKind};

/// Pattern position: a variable (written `?name` in documents) or a concept.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(ConceptId),
}

impl Term {
    pub fn parse(text: &str) -> Term {
        match text.strip_prefix('?') {
            Some(name) => Term::Var(name.to_string()),
            None => Term::Const(ConceptId::new(text)),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Term::Var(name) => format!("?{name}"),
            Term::Const(id) => id.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationPattern {
    pub source: Term,
    pub kind: RelationKind,
    pub target: Term,
}

impl RelationPattern {
    pub fn new(source: &str, kind: RelationKind, target: &str) -> Self {
        RelationPattern {
            source: Term::parse(source),
            kind,
            target: Term::parse(target),
        }
    }

    fn variables(&self) -> impl Iterator<Item = &str> {
        [&self.source, &self.target].into_iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    fn constants(&self) -> impl Iterator<Item = &ConceptId> {
        [&self.source, &self.target].into_iter().filter_map(|t| match t {
            Term::Const(c) => Some(c),
            Term::Var(_) => None,
        })
    }
}

type Bindings = BTreeMap<String, ConceptId>;

fn unify(term: &Term, value: &ConceptId, bindings: &mut Bindings) -> bool {
    match term {
        Term::Const(c) => c == value,
        Term::Var(name) => match bindings.get(name) {
            Some(bound) => bound == value,
            None => {
                bindings.insert(name.clone(), value.clone());
                true
            }
        },
    }
}

fn resolve(term: &Term, bindings: &Bindings) -> Option<ConceptId> {
    match term {
        Term::Const(c) => Some(c.clone()),
        Term::Var(name) => bindings.get(name).cloned(),
    }
}

/// Horn-style rule: when every antecedent pattern matches, the consequent
/// relation is derived. Variables bind to concept ids; there is no negation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtrapolationRule {
    pub id: String,
    pub antecedents: Vec<RelationPattern>,
    pub consequent: RelationPattern,
}

impl ExtrapolationRule {
    pub fn new(id: impl Into<String>, antecedents: Vec<RelationPattern>, consequent: RelationPattern) -> Self {
        ExtrapolationRule {
            id: id.into(),
            antecedents,
            consequent,
        }
    }

    pub(crate) fn validate(&self, graph: &OntologyGraph) -> Result<(), OntologyError> {
        if self.antecedents.is_empty() {
            return Err(OntologyError::MalformedRule {
                rule: self.id.clone(),
                reason: "no antecedents".into(),
            });
        }
        let bound: BTreeSet<&str> = self.antecedents.iter().flat_map(RelationPattern::variables).collect();
        if let Some(free) = self.consequent.variables().find(|v| !bound.contains(v)) {
            return Err(OntologyError::UnboundVariable {
                rule: self.id.clone(),
                variable: free.to_string(),
            });
        }
        let patterns = self.antecedents.iter().chain([&self.consequent]);
        for constant in patterns.flat_map(RelationPattern::constants) {
            if graph.concept(constant.as_str()).is_none() {
                return Err(OntologyError::DanglingConceptReference {
                    context: format!("rule `{}`", self.id),
                    concept: constant.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Every consequent triple the rule yields against `graph`.
    fn fire(&self, graph: &OntologyGraph) -> Vec<(ConceptId, RelationKind, ConceptId)> {
        let mut partial: Vec<Bindings> = vec![Bindings::new()];
        for pattern in &self.antecedents {
            let mut next = Vec::new();
            for bindings in &partial {
                for relation in graph.relations.iter().filter(|r| r.kind == pattern.kind) {
                    let mut candidate = bindings.clone();
                    if unify(&pattern.source, &relation.source, &mut candidate)
                        && unify(&pattern.target, &relation.target, &mut candidate)
                    {
                        next.push(candidate);
                    }
                }
            }
            if next.is_empty() {
                return Vec::new();
            }
            partial = next;
        }
        partial
            .iter()
            .filter_map(|b| {
                Some((
                    resolve(&self.consequent.source, b)?,
                    self.consequent.kind,
                    resolve(&self.consequent.target, b)?,
                ))
            })
            .collect()
    }
}

impl OntologyGraph {
    /// Forward-chains `rules` to a fixpoint. Existing relations are kept
    /// untouched; every new relation is tagged with the rule that produced
    /// it. Terminates because no concepts are created.
    pub fn apply_extrapolation(&self, rules: &[ExtrapolationRule]) -> OntologyGraph {
        let mut graph = self.clone();
        loop {
            let mut added = false;
            for rule in rules {
                for (source, kind, target) in rule.fire(&graph) {
                    added |= graph.insert(Relation {
                        source,
                        kind,
                        target,
                        provenance: Provenance::Derived(rule.id.clone()),
                    });
                }
            }
            if !added {
                return graph;
            }
        }
    }

    /// Applies the rules declared in the graph's own document.
    pub fn extrapolated(&self) -> OntologyGraph {
        let rules = self.rules.clone();
        self.apply_extrapolation(&rules)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Concept;
    use super::*;

    fn graph() -> OntologyGraph {
        OntologyGraph::build(
            vec![
                Concept::class("bacterium", "Bactérie"),
                Concept::class("shigella", "Shigella"),
                Concept::class("shigellosis", "Shigellose"),
            ],
            vec![
                ("shigella".into(), RelationKind::IsA, "bacterium".into()),
                ("shigellosis".into(), RelationKind::CausedBy, "shigella".into()),
            ],
            vec![],
        )
        .unwrap()
    }

    fn bacterial_rule() -> ExtrapolationRule {
        ExtrapolationRule::new(
            "bacterial-association",
            vec![
                RelationPattern::new("?x", RelationKind::CausedBy, "?b"),
                RelationPattern::new("?b", RelationKind::IsA, "bacterium"),
            ],
            RelationPattern::new("?x", RelationKind::AssociatedWith, "bacterium"),
        )
    }

    #[test]
    fn empty_rule_list_is_identity() {
        let g = graph();
        assert_eq!(g.apply_extrapolation(&[]), g);
    }

    #[test]
    fn rule_derives_tagged_relation() {
        let out = graph().apply_extrapolation(&[bacterial_rule()]);
        let derived: Vec<_> = out.derived().collect();
        assert_eq!(derived.len(), 1);
        assert_eq!(derived[0].to_string(), "(shigellosis, associated_with, bacterium)");
        assert_eq!(
            derived[0].provenance,
            Provenance::Derived("bacterial-association".into())
        );
    }

    #[test]
    fn duplicate_of_asserted_keeps_asserted_provenance() {
        let rule = ExtrapolationRule::new(
            "restate",
            vec![RelationPattern::new("?a", RelationKind::IsA, "?b")],
            RelationPattern::new("?a", RelationKind::IsA, "?b"),
        );
        let g = graph();
        let out = g.apply_extrapolation(&[rule]);
        assert_eq!(out, g);
        assert!(out.derived().next().is_none());
    }

    #[test]
    fn chains_through_derived_relations() {
        // transitive closure of associated_with via a recursive rule
        let g = OntologyGraph::build(
            vec![
                Concept::class("a", "A"),
                Concept::class("b", "B"),
                Concept::class("c", "C"),
            ],
            vec![
                ("a".into(), RelationKind::AssociatedWith, "b".into()),
                ("b".into(), RelationKind::AssociatedWith, "c".into()),
            ],
            vec![],
        )
        .unwrap();
        let rule = ExtrapolationRule::new(
            "transitive",
            vec![
                RelationPattern::new("?x", RelationKind::AssociatedWith, "?y"),
                RelationPattern::new("?y", RelationKind::AssociatedWith, "?z"),
            ],
            RelationPattern::new("?x", RelationKind::AssociatedWith, "?z"),
        );
        let out = g.apply_extrapolation(&[rule]);
        assert!(out.contains("a", RelationKind::AssociatedWith, "c"));
        assert_eq!(out.derived().count(), 1);
    }

    #[test]
    fn unbound_consequent_variable_is_rejected() {
        let rule = ExtrapolationRule::new(
            "bad",
            vec![RelationPattern::new("?x", RelationKind::IsA, "bacterium")],
            RelationPattern::new("?x", RelationKind::AssociatedWith, "?y"),
        );
        assert!(matches!(
            rule.validate(&graph()),
            Err(OntologyError::UnboundVariable { variable, .. }) if variable == "y"
        ));
    }
}
