use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::memory::FindingValue;
use crate::ontology::SignCategory;

/// Per-category and keyword weights of the case similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub sp: f64,
    pub so: f64,
    pub se: f64,
    pub sa: f64,
    pub keyword: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            sp: 4.0,
            so: 2.0,
            se: 1.0,
            sa: 0.5,
            keyword: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightsError {
    #[error("weight `{0}` must be finite and non-negative")]
    Negative(&'static str),
    #[error("at least one weight must be strictly positive")]
    AllZero,
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<(), WeightsError> {
        let named = [
            ("sp", self.sp),
            ("so", self.so),
            ("se", self.se),
            ("sa", self.sa),
            ("keyword", self.keyword),
        ];
        if let Some((name, _)) = named.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(WeightsError::Negative(name));
        }
        if named.iter().all(|(_, w)| *w == 0.0) {
            return Err(WeightsError::AllZero);
        }
        Ok(())
    }

    pub fn category(&self, category: SignCategory) -> f64 {
        match category {
            SignCategory::SP => self.sp,
            SignCategory::SO => self.so,
            SignCategory::SE => self.se,
            SignCategory::SA => self.sa,
        }
    }
}

/// The comparable part of a case or a session: known findings and problem
/// keywords.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseProfile {
    pub findings: BTreeMap<String, FindingValue>,
    pub keywords: BTreeSet<String>,
}

impl CaseProfile {
    pub fn new(
        findings: impl IntoIterator<Item = (String, FindingValue)>,
        keywords: impl IntoIterator<Item = String>,
    ) -> Self {
        CaseProfile {
            findings: findings.into_iter().filter(|(_, v)| v.is_known()).collect(),
            keywords: keywords.into_iter().collect(),
        }
    }

    fn known(&self, sign: &str) -> Option<&FindingValue> {
        self.findings.get(sign).filter(|v| v.is_known())
    }
}

/// Sign-to-category resolution for weighting. Signs without a declared
/// category weigh as obligatory signs.
pub trait SignCategories {
    fn category_of(&self, sign: &str) -> Option<SignCategory>;
}

impl SignCategories for BTreeMap<String, SignCategory> {
    fn category_of(&self, sign: &str) -> Option<SignCategory> {
        self.get(sign).copied()
    }
}

/// Weighted Jaccard similarity in [0, 1].
///
/// Numerator: weights of signs known on both sides with the same value
/// class, plus the keyword weight per shared keyword. Denominator: weights
/// of signs known on either side, plus the keyword weight per keyword in the
/// union. Signs unknown on both sides contribute nothing.
pub fn similarity(
    a: &CaseProfile,
    b: &CaseProfile,
    weights: &SimilarityWeights,
    categories: &impl SignCategories,
) -> f64 {
    let weight = |sign: &str| weights.category(categories.category_of(sign).unwrap_or(SignCategory::SO));
    let mut agreeing = 0.0;
    let mut total = 0.0;
    let signs: BTreeSet<&String> = a.findings.keys().chain(b.findings.keys()).collect();
    for sign in signs {
        match (a.known(sign), b.known(sign)) {
            (None, None) => {}
            (Some(x), Some(y)) if x.agrees_with(y) => {
                agreeing += weight(sign);
                total += weight(sign);
            }
            _ => total += weight(sign),
        }
    }
    let shared = a.keywords.intersection(&b.keywords).count() as f64;
    let union = a.keywords.union(&b.keywords).count() as f64;
    agreeing += weights.keyword * shared;
    total += weights.keyword * union;
    if total > 0.0 {
        (agreeing / total).clamp(0.0, 1.0)
    } else if a == b {
        1.0
    } else {
        0.0
    }
}
