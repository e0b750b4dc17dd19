//! Generators and brute-force oracles shared by the property and acceptance
//! tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

use smaad::casebase::{similarity, Case, CaseBase, CaseProfile, Component, Environment, SimilarityWeights};
use smaad::memory::FindingValue;
use smaad::ontology::{
    Concept, ConceptId, ExtrapolationRule, OntologyGraph, RelationKind, RelationPattern, SignCategory,
};
use smaad::stage::StageKind;

/// Draws one value from `strategy`.
pub fn sample<S: Strategy>(runner: &mut TestRunner, strategy: &S) -> S::Value {
    strategy.new_tree(runner).expect("strategy generates").current()
}

/// Random DAG: concept `c{i}` may only point at concepts with a smaller
/// index, so no cycle can form. Non-IsA edges are mixed in to check that
/// ancestry ignores them.
#[derive(Clone, Debug)]
pub struct Dag {
    pub nodes: usize,
    pub edges: BTreeSet<(usize, RelationKind, usize)>,
}

pub fn dag(max_nodes: usize) -> impl Strategy<Value = Dag> {
    (1..=max_nodes).prop_flat_map(|nodes| {
        let edge = (0..nodes, 0..nodes, prop::bool::weighted(0.8));
        prop::collection::vec(edge, 0..=nodes * 3).prop_map(move |raw| Dag {
            nodes,
            edges: raw
                .into_iter()
                .filter(|(a, b, _)| a != b)
                .map(|(a, b, isa)| {
                    let kind = if isa { RelationKind::IsA } else { RelationKind::HasA };
                    (a.max(b), kind, a.min(b))
                })
                .collect(),
        })
    })
}

pub fn concept_id(index: usize) -> String {
    format!("c{index}")
}

impl Dag {
    pub fn graph(&self) -> OntologyGraph {
        let concepts = (0..self.nodes)
            .map(|i| Concept::class(&concept_id(i), &format!("Concept {i}")))
            .collect();
        let relations = self
            .edges
            .iter()
            .map(|(a, kind, b)| (ConceptId::new(concept_id(*a)), *kind, ConceptId::new(concept_id(*b))))
            .collect();
        OntologyGraph::build(concepts, relations, vec![]).expect("acyclic by construction")
    }

    /// Reachability over IsA edges by depth-first search.
    pub fn brute_ancestors(&self, node: usize) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(current) = stack.pop() {
            for (_, _, parent) in self
                .edges
                .iter()
                .filter(|(child, kind, _)| *child == current && *kind == RelationKind::IsA)
            {
                if seen.insert(*parent) {
                    stack.push(*parent);
                }
            }
        }
        seen.into_iter().map(concept_id).collect()
    }

    pub fn isa_parents(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|(child, kind, _)| *child == node && *kind == RelationKind::IsA)
            .map(|(_, _, parent)| *parent)
            .collect()
    }
}

/// Random rule sets over a fixed concept vocabulary. Antecedents form a
/// chain `?a k1 ?b, ?b k2 ?c` so every rule joins on a shared variable;
/// any position may be replaced by a constant.
pub fn rule_set(constants: Vec<String>) -> impl Strategy<Value = Vec<ExtrapolationRule>> {
    let constants = constants.clone();
    let kind = prop::sample::select(RelationKind::ALL.to_vec());
    let term = move |var: &'static str| {
        let constants = constants.clone();
        prop_oneof![
            4 => Just(format!("?{var}")),
            1 => prop::sample::select(constants),
        ]
    };
    let rule = (
        1..=2usize,
        kind.clone(),
        kind.clone(),
        kind,
        term("a"),
        term("b"),
        term("c"),
        0..3usize,
        0..3usize,
    )
        .prop_map(|(length, k1, k2, kc, a, b, c, source, target)| {
            let mut antecedents = vec![RelationPattern::new(&a, k1, &b)];
            if length == 2 {
                antecedents.push(RelationPattern::new(&b, k2, &c));
            }
            let terms: Vec<&String> = if length == 2 { vec![&a, &b, &c] } else { vec![&a, &b] };
            let pick = |i: usize| terms[i % terms.len()].clone();
            (antecedents, RelationPattern::new(&pick(source), kc, &pick(target)))
        });
    prop::collection::vec(rule, 1..=3).prop_map(|rules| {
        rules
            .into_iter()
            .enumerate()
            .map(|(i, (antecedents, consequent))| ExtrapolationRule::new(format!("r{i}"), antecedents, consequent))
            .collect()
    })
}

pub const SIGNS: [&str; 10] = ["SP1", "SO1", "SE1", "SE2", "SE3", "SE4", "SA1", "AC", "SG", "X1"];
pub const KEYWORDS: [&str; 4] = ["diarrhée aiguë", "fièvre", "voyage", "enfant"];

/// Categories for [`SIGNS`]; `X1` is deliberately uncategorized.
pub fn categories() -> BTreeMap<String, SignCategory> {
    [
        ("SP1", SignCategory::SP),
        ("SO1", SignCategory::SO),
        ("SE1", SignCategory::SE),
        ("SE2", SignCategory::SE),
        ("SE3", SignCategory::SE),
        ("SE4", SignCategory::SE),
        ("SA1", SignCategory::SA),
        ("AC", SignCategory::SE),
        ("SG", SignCategory::SE),
    ]
    .into_iter()
    .map(|(s, c)| (s.to_string(), c))
    .collect()
}

pub fn finding_value() -> impl Strategy<Value = FindingValue> {
    prop_oneof![
        Just(FindingValue::Present),
        Just(FindingValue::Absent),
        Just(FindingValue::Unknown),
        prop::sample::select(vec!["shigella", "salmonella"]).prop_map(|r| FindingValue::Positive(r.into())),
    ]
}

pub fn profile() -> impl Strategy<Value = CaseProfile> {
    (
        prop::collection::btree_map(prop::sample::select(SIGNS.to_vec()), finding_value(), 0..=SIGNS.len()),
        prop::collection::btree_set(prop::sample::select(KEYWORDS.to_vec()), 0..=KEYWORDS.len()),
    )
        .prop_map(|(findings, keywords)| {
            CaseProfile::new(
                findings.into_iter().map(|(s, v)| (s.to_string(), v)),
                keywords.into_iter().map(str::to_string),
            )
        })
}

pub fn weights() -> impl Strategy<Value = SimilarityWeights> {
    (0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64, 0.1..5.0f64).prop_map(|(sp, so, se, sa, keyword)| {
        SimilarityWeights {
            sp,
            so,
            se,
            sa,
            keyword,
        }
    })
}

/// A retainable case: at least one keyword and a diagnosis component.
pub fn case_from(index: usize, profile: CaseProfile) -> Case {
    let mut keywords = profile.keywords;
    if keywords.is_empty() {
        keywords.insert(KEYWORDS[index % KEYWORDS.len()].to_string());
    }
    let diagnosis = ["Δ1", "Δ3", "Δ5"][index % 3];
    Case {
        id: format!("case-{:06}", index + 1),
        pb_keywords: keywords,
        environment: Environment {
            findings: profile.findings,
            antecedents: vec![],
        },
        result: diagnosis.to_string(),
        components: BTreeMap::from([(
            StageKind::Diagnosis,
            Component {
                value: diagnosis.to_string(),
                label: None,
                detail: None,
                trace: [0, 0],
            },
        )]),
        trace: vec![],
        retained_at: format!("2026-01-01T00:00:{:02}.{:06}Z", index / 1_000_000, index),
        revisions: vec![],
    }
}

pub fn case_base(profiles: Vec<CaseProfile>) -> CaseBase {
    let mut base = CaseBase::in_memory();
    base.set_sign_categories(categories());
    for (index, profile) in profiles.into_iter().enumerate() {
        base.retain(case_from(index, profile))
            .expect("generated cases are valid");
    }
    base
}

/// Scores every case, best first, latest retained first among equals.
pub fn brute_retrieve(
    base: &CaseBase,
    query: &CaseProfile,
    k: usize,
    weights: &SimilarityWeights,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(usize, String, f64)> = base
        .cases()
        .iter()
        .enumerate()
        .map(|(order, case)| {
            (
                order,
                case.id.clone(),
                similarity(query, &case.profile(), weights, base.sign_categories()),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.0.cmp(&a.0)));
    scored.into_iter().take(k).map(|(_, id, score)| (id, score)).collect()
}

pub fn retrieve_ids(base: &CaseBase, query: &CaseProfile, k: usize, weights: &SimilarityWeights) -> Vec<(String, f64)> {
    base.retrieve(query, k, weights)
        .into_iter()
        .map(|(case, score)| (case.id.clone(), score))
        .collect()
}
