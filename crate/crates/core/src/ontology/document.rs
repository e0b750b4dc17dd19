use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::rules::{ExtrapolationRule, RelationPattern, Term};
use super::{Concept, ConceptId, ConceptKind, Literal, OntologyError, OntologyGraph, RelationKind};
use crate::stage::StageKind;

/// On-disk ontology: `concepts`, `relations` and `rules` arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyDocument {
    #[serde(default)]
    pub concepts: Vec<ConceptDoc>,
    #[serde(default)]
    pub relations: Vec<RelationDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptDoc {
    pub id: String,
    pub label: String,
    #[serde(default = "default_kind")]
    pub kind: ConceptKind,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub stage_scope: BTreeSet<StageKind>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Literal>,
}

fn default_kind() -> ConceptKind {
    ConceptKind::Class
}

impl From<&Concept> for ConceptDoc {
    fn from(c: &Concept) -> Self {
        ConceptDoc {
            id: c.id.to_string(),
            label: c.label.clone(),
            kind: c.kind,
            stage_scope: c.stage_scope.clone(),
            attributes: c.attributes.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDoc {
    pub source: String,
    pub kind: String,
    pub target: String,
}

pub type PatternDoc = RelationDoc;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub id: String,
    pub antecedents: Vec<PatternDoc>,
    pub consequent: PatternDoc,
}

fn parse_kind(doc: &RelationDoc, index: usize) -> Result<RelationKind, OntologyError> {
    doc.kind.parse().map_err(|()| OntologyError::UnknownRelationKind {
        index,
        kind: doc.kind.clone(),
        triple: format!("({}, {}, {})", doc.source, doc.kind, doc.target),
    })
}

impl OntologyDocument {
    pub fn into_graph(self) -> Result<OntologyGraph, OntologyError> {
        let concepts = self
            .concepts
            .into_iter()
            .map(|c| Concept {
                id: ConceptId::new(c.id),
                label: c.label,
                kind: c.kind,
                stage_scope: c.stage_scope,
                attributes: c.attributes,
            })
            .collect();
        let relations = self
            .relations
            .iter()
            .enumerate()
            .map(|(index, r)| {
                Ok((
                    ConceptId::new(&r.source),
                    parse_kind(r, index)?,
                    ConceptId::new(&r.target),
                ))
            })
            .collect::<Result<Vec<_>, OntologyError>>()?;
        let rules = self
            .rules
            .iter()
            .map(|rule| {
                let pattern = |p: &PatternDoc| -> Result<RelationPattern, OntologyError> {
                    let kind = p.kind.parse().map_err(|()| OntologyError::MalformedRule {
                        rule: rule.id.clone(),
                        reason: format!("unknown relation kind `{}`", p.kind),
                    })?;
                    Ok(RelationPattern {
                        source: Term::parse(&p.source),
                        kind,
                        target: Term::parse(&p.target),
                    })
                };
                Ok(ExtrapolationRule {
                    id: rule.id.clone(),
                    antecedents: rule
                        .antecedents
                        .iter()
                        .map(pattern)
                        .collect::<Result<_, OntologyError>>()?,
                    consequent: pattern(&rule.consequent)?,
                })
            })
            .collect::<Result<Vec<_>, OntologyError>>()?;
        OntologyGraph::build(concepts, relations, rules)
    }

    /// Serializes the asserted part of `graph`. Derived relations are
    /// recomputed at load and never written.
    pub fn from_graph(graph: &OntologyGraph) -> Self {
        let pattern = |p: &RelationPattern| PatternDoc {
            source: p.source.render(),
            kind: p.kind.as_str().to_string(),
            target: p.target.render(),
        };
        OntologyDocument {
            concepts: graph.concepts().map(ConceptDoc::from).collect(),
            relations: graph
                .asserted()
                .map(|r| RelationDoc {
                    source: r.source.to_string(),
                    kind: r.kind.as_str().to_string(),
                    target: r.target.to_string(),
                })
                .collect(),
            rules: graph
                .rules()
                .iter()
                .map(|r| RuleDoc {
                    id: r.id.clone(),
                    antecedents: r.antecedents.iter().map(pattern).collect(),
                    consequent: pattern(&r.consequent),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::load_ontology;
    use super::*;

    #[test]
    fn unknown_relation_kind_names_the_triple() {
        let err = load_ontology(
            r#"{"concepts": [{"id": "a", "label": "A"}, {"id": "b", "label": "B"}],
                "relations": [{"source": "a", "kind": "likes", "target": "b"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, OntologyError::UnknownRelationKind { .. }));
        assert_eq!(
            err.to_string(),
            "relations[0] (a, likes, b): unknown relation kind `likes`"
        );
    }

    #[test]
    fn dangling_and_duplicate_references() {
        let dangling = load_ontology(
            r#"{"concepts": [{"id": "a", "label": "A"}],
                "relations": [{"source": "a", "kind": "is_a", "target": "zz"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(
            dangling,
            OntologyError::DanglingConceptReference { ref concept, .. } if concept == "zz"
        ));
        let duplicate =
            load_ontology(r#"{"concepts": [{"id": "a", "label": "A"}, {"id": "a", "label": "A2"}]}"#).unwrap_err();
        assert!(matches!(duplicate, OntologyError::DuplicateConceptId { index: 1, .. }));
    }

    #[test]
    fn rules_are_parsed_and_checked() {
        let graph = load_ontology(
            r#"{"concepts": [{"id": "bacterium", "label": "Bactérie"}],
                "rules": [{"id": "r1",
                           "antecedents": [{"source": "?x", "kind": "caused_by", "target": "?b"},
                                           {"source": "?b", "kind": "is_a", "target": "bacterium"}],
                           "consequent": {"source": "?x", "kind": "associated_with", "target": "bacterium"}}]}"#,
        )
        .unwrap();
        assert_eq!(graph.rules().len(), 1);
        let unbound = load_ontology(
            r#"{"concepts": [],
                "rules": [{"id": "r1",
                           "antecedents": [{"source": "?x", "kind": "is_a", "target": "?y"}],
                           "consequent": {"source": "?x", "kind": "has_a", "target": "?z"}}]}"#,
        )
        .unwrap_err();
        assert!(matches!(unbound, OntologyError::UnboundVariable { .. }));
    }

    #[test]
    fn serialize_then_reload_is_equal() {
        let text = r#"{"concepts": [{"id": "a", "label": "A", "stage_scope": ["Diagnosis"],
                                     "attributes": {"sign_category": "SO", "weight": 2.0}},
                                    {"id": "b", "label": "B", "kind": "individual"}],
                       "relations": [{"source": "b", "kind": "is_a", "target": "a"}]}"#;
        let graph = load_ontology(text).unwrap();
        let json = serde_json::to_string(&OntologyDocument::from_graph(&graph)).unwrap();
        assert_eq!(load_ontology(&json).unwrap(), graph);
    }
}
