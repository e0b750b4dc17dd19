//! Case memory: retains solved sessions indexed by problem keywords, patient
//! findings and outcome, and retrieves the most similar prior cases.

mod similarity;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::automaton::TraceStep;
use crate::memory::{FindingValue, WorkingMemory};
use crate::ontology::SignCategory;
use crate::stage::StageKind;

pub use similarity::{similarity, CaseProfile, SignCategories, SimilarityWeights, WeightsError};

/// Default minimum score for a retrieved case to be offered as a suggestion.
pub const DEFAULT_SUGGESTION_THRESHOLD: f64 = 0.75;

const INDEX_FILE: &str = "index.json";

/// Patient record snapshot stored with a case.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub findings: BTreeMap<String, FindingValue>,
    #[serde(default)]
    pub antecedents: Vec<String>,
}

/// A fired transition in a session, tagged with its stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTraceStep {
    pub stage: StageKind,
    #[serde(flatten)]
    pub step: TraceStep,
}

/// One stage component of a case and the slice of the case trace that
/// produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Half-open range of indices into the case trace.
    pub trace: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub stage: StageKind,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub pb_keywords: BTreeSet<String>,
    pub environment: Environment,
    pub result: String,
    pub components: BTreeMap<StageKind, Component>,
    pub trace: Vec<SessionTraceStep>,
    pub retained_at: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub revisions: Vec<Revision>,
}

impl Case {
    pub fn profile(&self) -> CaseProfile {
        CaseProfile::new(self.environment.findings.clone(), self.pb_keywords.iter().cloned())
    }

    pub fn component(&self, stage: StageKind) -> Option<&Component> {
        self.components.get(&stage)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CaseBaseError {
    #[error("case `{0}` already exists")]
    DuplicateCaseId(String),
    #[error("case `{0}` has no Diagnosis component")]
    MissingDiagnosis(String),
    #[error("case `{0}` has no problem keywords")]
    NoKeywords(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("case file {path}: {source}")]
    CaseFile { path: PathBuf, source: serde_json::Error },
    #[error("case base i/o: {0}")]
    Io(#[from] io::Error),
}

/// Inverted index from keywords and finding keys to case ids. Derived data.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseIndex {
    pub keywords: BTreeMap<String, BTreeSet<String>>,
    pub findings: BTreeMap<String, BTreeSet<String>>,
}

fn finding_key(sign: &str, value: &FindingValue) -> String {
    format!("{sign}={}", value.class())
}

impl CaseIndex {
    fn add(&mut self, case: &Case) {
        for keyword in &case.pb_keywords {
            self.keywords
                .entry(keyword.clone())
                .or_default()
                .insert(case.id.clone());
        }
        for (sign, value) in case.environment.findings.iter().filter(|(_, v)| v.is_known()) {
            self.findings
                .entry(finding_key(sign, value))
                .or_default()
                .insert(case.id.clone());
        }
    }

    fn build<'a>(cases: impl IntoIterator<Item = &'a Case>) -> Self {
        let mut index = CaseIndex::default();
        for case in cases {
            index.add(case);
        }
        index
    }

    pub fn keyword_postings(&self, keyword: &str) -> Option<&BTreeSet<String>> {
        self.keywords.get(keyword)
    }

    /// Cases sharing at least one keyword or agreeing finding with `query`.
    fn candidates(&self, query: &CaseProfile) -> BTreeSet<&str> {
        let by_keyword = query.keywords.iter().filter_map(|k| self.keywords.get(k));
        let by_finding = query
            .findings
            .iter()
            .filter_map(|(s, v)| self.findings.get(&finding_key(s, v)));
        by_keyword.chain(by_finding).flatten().map(String::as_str).collect()
    }
}

/// Non-binding suggestion built from a retrieved case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSuggestion {
    pub case_id: String,
    pub score: f64,
    pub components: BTreeMap<StageKind, Component>,
    /// Signs on which the prior case and the current situation disagree.
    pub differences: Vec<FindingDifference>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingDifference {
    pub sign: String,
    pub case_value: FindingValue,
    pub current_value: FindingValue,
}

/// Builds a suggestion from `case` when `score` reaches `threshold`.
pub fn reuse(case: &Case, score: f64, memory: &WorkingMemory, threshold: f64) -> Option<SolutionSuggestion> {
    if score < threshold {
        return None;
    }
    let signs: BTreeSet<&String> = case
        .environment
        .findings
        .keys()
        .chain(memory.findings().keys())
        .collect();
    let differences = signs
        .into_iter()
        .filter_map(|sign| {
            let case_value = case
                .environment
                .findings
                .get(sign)
                .cloned()
                .unwrap_or(FindingValue::Unknown);
            let current_value = memory.finding(sign).clone();
            let same = case_value.agrees_with(&current_value) || (!case_value.is_known() && !current_value.is_known());
            (!same).then(|| FindingDifference {
                sign: sign.clone(),
                case_value,
                current_value,
            })
        })
        .collect();
    Some(SolutionSuggestion {
        case_id: case.id.clone(),
        score,
        components: case.components.clone(),
        differences,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseBaseStats {
    pub cases: usize,
    pub keywords: BTreeMap<String, usize>,
    pub diagnoses: BTreeMap<String, usize>,
    pub revised: usize,
}

/// Case memory, optionally persisted as one JSON document per case in a
/// directory plus a rebuildable `index.json`.
#[derive(Clone, Debug, Default)]
pub struct CaseBase {
    dir: Option<PathBuf>,
    /// Retention order, oldest first.
    cases: Vec<Case>,
    index: CaseIndex,
    categories: BTreeMap<String, SignCategory>,
}

/// Single-writer, multi-reader handle shared by sessions.
pub type SharedCaseBase = Arc<RwLock<CaseBase>>;

fn is_case_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json") && path.file_name().is_some_and(|n| n != INDEX_FILE)
}

impl CaseBase {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory-backed base. A missing or stale
    /// index is rebuilt from the case files.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CaseBaseError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut cases = Vec::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths.into_iter().filter(|p| is_case_file(p)) {
            let text = fs::read_to_string(&path)?;
            let case: Case = serde_json::from_str(&text).map_err(|source| CaseBaseError::CaseFile {
                path: path.clone(),
                source,
            })?;
            cases.push(case);
        }
        cases.sort_by(|a, b| (&a.retained_at, &a.id).cmp(&(&b.retained_at, &b.id)));
        let rebuilt = CaseIndex::build(&cases);
        let stored: Option<CaseIndex> = fs::read_to_string(dir.join(INDEX_FILE))
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok());
        let base = CaseBase {
            dir: Some(dir),
            cases,
            index: rebuilt,
            categories: BTreeMap::new(),
        };
        if stored.as_ref() != Some(&base.index) {
            base.write_index()?;
        }
        Ok(base)
    }

    pub fn shared(self) -> SharedCaseBase {
        Arc::new(RwLock::new(self))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn set_sign_categories(&mut self, categories: BTreeMap<String, SignCategory>) {
        self.categories = categories;
    }

    pub fn sign_categories(&self) -> &BTreeMap<String, SignCategory> {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn index(&self) -> &CaseIndex {
        &self.index
    }

    /// Next free sequential id (`case-000001`, ...).
    pub fn next_id(&self) -> String {
        let highest = self
            .cases
            .iter()
            .filter_map(|c| c.id.strip_prefix("case-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        format!("case-{:06}", highest + 1)
    }

    /// Stores and indexes a case. Persisted before returning when the base
    /// is directory-backed.
    pub fn retain(&mut self, case: Case) -> Result<String, CaseBaseError> {
        if !case.components.contains_key(&StageKind::Diagnosis) {
            return Err(CaseBaseError::MissingDiagnosis(case.id));
        }
        if case.pb_keywords.is_empty() {
            return Err(CaseBaseError::NoKeywords(case.id));
        }
        if self.get(&case.id).is_some() {
            return Err(CaseBaseError::DuplicateCaseId(case.id));
        }
        self.write_case(&case)?;
        self.index.add(&case);
        let id = case.id.clone();
        self.cases.push(case);
        self.write_index()?;
        Ok(id)
    }

    /// Attaches a revision note to a case after the user rejected its
    /// suggestion.
    pub fn revise(&mut self, id: &str, revision: Revision) -> Result<(), CaseBaseError> {
        let position = self
            .cases
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| CaseBaseError::UnknownCase(id.to_string()))?;
        self.cases[position].revisions.push(revision);
        let case = self.cases[position].clone();
        self.write_case(&case)
    }

    pub fn score(&self, query: &CaseProfile, case: &Case, weights: &SimilarityWeights) -> f64 {
        similarity(query, &case.profile(), weights, &self.categories)
    }

    /// Top-`k` cases by similarity to `query`, best first; equal scores go
    /// to the most recently retained case.
    pub fn retrieve(&self, query: &CaseProfile, k: usize, weights: &SimilarityWeights) -> Vec<(&Case, f64)> {
        if k == 0 || self.cases.is_empty() {
            return Vec::new();
        }
        let empty_query = query.keywords.is_empty() && query.findings.is_empty();
        let candidates = self.index.candidates(query);
        // Cases outside the candidate set share nothing with a non-empty
        // query, so their score is exactly zero.
        let mut scored: Vec<(usize, &Case, f64)> = self
            .cases
            .iter()
            .enumerate()
            .map(|(order, case)| {
                let score = if empty_query || candidates.contains(case.id.as_str()) {
                    self.score(query, case, weights)
                } else {
                    0.0
                };
                (order, case, score)
            })
            .collect();
        scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(_, case, score)| (case, score))
            .collect()
    }

    pub fn stats(&self) -> CaseBaseStats {
        let mut diagnoses = BTreeMap::new();
        for case in &self.cases {
            if let Some(d) = case.component(StageKind::Diagnosis) {
                *diagnoses.entry(d.value.clone()).or_insert(0) += 1;
            }
        }
        CaseBaseStats {
            cases: self.cases.len(),
            keywords: self
                .index
                .keywords
                .iter()
                .map(|(k, ids)| (k.clone(), ids.len()))
                .collect(),
            diagnoses,
            revised: self.cases.iter().filter(|c| !c.revisions.is_empty()).count(),
        }
    }

    fn write_case(&self, case: &Case) -> Result<(), CaseBaseError> {
        if let Some(dir) = &self.dir {
            write_atomic(
                &dir.join(format!("{}.json", case.id)),
                &serde_json::to_vec_pretty(case).expect("case serializes"),
            )?;
        }
        Ok(())
    }

    fn write_index(&self) -> Result<(), CaseBaseError> {
        if let Some(dir) = &self.dir {
            write_atomic(
                &dir.join(INDEX_FILE),
                &serde_json::to_vec_pretty(&self.index).expect("index serializes"),
            )?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
