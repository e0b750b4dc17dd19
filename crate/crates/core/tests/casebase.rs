mod common;

use proptest::prelude::*;

use smaad::casebase::{similarity, CaseBase, CaseProfile, SimilarityWeights};
use smaad::memory::FindingValue;

use common::{brute_retrieve, case_base, case_from, categories, profile, retrieve_ids, weights};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn similarity_is_symmetric_and_bounded(a in profile(), b in profile(), w in weights()) {
        let categories = categories();
        let ab = similarity(&a, &b, &w, &categories);
        let ba = similarity(&b, &a, &w, &categories);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn a_profile_is_identical_to_itself(a in profile(), w in weights()) {
        prop_assert_eq!(similarity(&a, &a, &w, &categories()), 1.0);
    }

    #[test]
    fn retrieval_matches_exhaustive_ranking(
        profiles in prop::collection::vec(profile(), 1..60),
        query in profile(),
        k in 1usize..20,
        w in weights(),
    ) {
        let base = case_base(profiles);
        let got = retrieve_ids(&base, &query, k, &w);
        prop_assert_eq!(got.len(), k.min(base.len()));
        prop_assert_eq!(got, brute_retrieve(&base, &query, k, &w));
    }
}

#[test]
fn unknown_findings_do_not_count() {
    let known = CaseProfile::new(
        [("SO1".to_string(), FindingValue::Present)],
        ["diarrhée aiguë".to_string()],
    );
    let with_unknown = CaseProfile::new(
        [
            ("SO1".to_string(), FindingValue::Present),
            ("SE1".to_string(), FindingValue::Unknown),
        ],
        ["diarrhée aiguë".to_string()],
    );
    let score = similarity(&known, &with_unknown, &SimilarityWeights::default(), &categories());
    assert_eq!(score, 1.0);
}

#[test]
fn weighted_score_is_frozen() {
    // SP1 agrees (4), SE1 disagrees (1), X1 agrees and weighs as SO (2),
    // one shared keyword of two (1 of 2).
    let a = CaseProfile::new(
        [
            ("SP1".to_string(), FindingValue::Present),
            ("SE1".to_string(), FindingValue::Absent),
            ("X1".to_string(), FindingValue::Positive("shigella".into())),
        ],
        ["diarrhée aiguë".to_string(), "fièvre".to_string()],
    );
    let b = CaseProfile::new(
        [
            ("SP1".to_string(), FindingValue::Present),
            ("SE1".to_string(), FindingValue::Present),
            ("X1".to_string(), FindingValue::Positive("salmonella".into())),
        ],
        ["diarrhée aiguë".to_string()],
    );
    let score = similarity(&a, &b, &SimilarityWeights::default(), &categories());
    assert_eq!(score, 7.0 / 9.0);
}

#[test]
fn retained_cases_survive_a_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let query = CaseProfile::new([("SO1".to_string(), FindingValue::Present)], ["fièvre".to_string()]);
    let weights = SimilarityWeights::default();
    let before = {
        let mut base = CaseBase::open(dir.path()).unwrap();
        base.set_sign_categories(categories());
        for index in 0..12 {
            let findings = [(
                "SO1".to_string(),
                if index % 2 == 0 {
                    FindingValue::Present
                } else {
                    FindingValue::Absent
                },
            )];
            base.retain(case_from(index, CaseProfile::new(findings, ["fièvre".to_string()])))
                .unwrap();
        }
        retrieve_ids(&base, &query, 4, &weights)
    };
    assert_eq!(
        before,
        [
            ("case-000011".to_string(), 1.0),
            ("case-000009".to_string(), 1.0),
            ("case-000007".to_string(), 1.0),
            ("case-000005".to_string(), 1.0),
        ]
    );
    let mut reopened = CaseBase::open(dir.path()).unwrap();
    reopened.set_sign_categories(categories());
    assert_eq!(reopened.len(), 12);
    assert_eq!(retrieve_ids(&reopened, &query, 4, &weights), before);
}
