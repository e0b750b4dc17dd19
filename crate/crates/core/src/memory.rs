//! Findings vocabulary and the supervisor's working memory.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stage::StageKind;

/// How a declared sign is observed, which decides the answers it accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    /// Observed at the bedside: present or absent.
    Clinical,
    /// Patient history flag: present or absent.
    Antecedent,
    /// Laboratory or imaging result: positive (with a result text) or absent.
    Test,
}

impl SignKind {
    /// The "sign is on" value used when enumerating complete assignments.
    pub fn affirmative(self) -> FindingValue {
        match self {
            SignKind::Clinical | SignKind::Antecedent => FindingValue::Present,
            SignKind::Test => FindingValue::Positive(String::new()),
        }
    }

    pub fn accepts(self, value: &FindingValue) -> bool {
        matches!(
            (self, value),
            (_, FindingValue::Absent)
                | (SignKind::Test, FindingValue::Positive(_))
                | (SignKind::Clinical | SignKind::Antecedent, FindingValue::Present)
        )
    }
}

/// The declared signs of a domain: the only ids guards and answers may use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SignSet {
    signs: BTreeMap<String, SignKind>,
}

impl SignSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: impl Into<String>, kind: SignKind) -> Self {
        self.insert(id, kind);
        self
    }

    pub fn insert(&mut self, id: impl Into<String>, kind: SignKind) {
        self.signs.insert(id.into(), kind);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.signs.contains_key(id)
    }

    pub fn kind(&self, id: &str) -> Option<SignKind> {
        self.signs.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SignKind)> {
        self.signs.iter().map(|(id, kind)| (id.as_str(), *kind))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.signs.keys().map(String::as_str)
    }
}

impl FromIterator<(String, SignKind)> for SignSet {
    fn from_iter<T: IntoIterator<Item = (String, SignKind)>>(iter: T) -> Self {
        SignSet {
            signs: iter.into_iter().collect(),
        }
    }
}

/// Observed value of a sign.
///
/// Serialized as `"present"`, `"absent"`, `"unknown"` or
/// `{"positive": "<result>"}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingValue {
    Present,
    Absent,
    Unknown,
    Positive(String),
}

impl FindingValue {
    pub fn is_known(&self) -> bool {
        !matches!(self, FindingValue::Unknown)
    }

    /// Present or positive.
    pub fn is_affirmative(&self) -> bool {
        matches!(self, FindingValue::Present | FindingValue::Positive(_))
    }

    /// Value class used for case comparison: positive results agree
    /// regardless of their free-text result.
    pub fn class(&self) -> &'static str {
        match self {
            FindingValue::Present => "present",
            FindingValue::Absent => "absent",
            FindingValue::Unknown => "unknown",
            FindingValue::Positive(_) => "positive",
        }
    }

    pub fn agrees_with(&self, other: &FindingValue) -> bool {
        self.is_known() && self.class() == other.class()
    }
}

impl fmt::Display for FindingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FindingValue::Positive(result) if !result.is_empty() => write!(f, "positive:{result}"),
            other => f.write_str(other.class()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed finding value `{0}` (expected present, absent, unknown or positive[:result])")]
pub struct MalformedValue(pub String);

impl FromStr for FindingValue {
    type Err = MalformedValue;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let (head, tail) = match trimmed.split_once(':') {
            Some((head, tail)) => (head, Some(tail.trim())),
            None => (trimmed, None),
        };
        match (head.to_ascii_lowercase().as_str(), tail) {
            ("present", None) => Ok(FindingValue::Present),
            ("absent", None) => Ok(FindingValue::Absent),
            ("unknown", None) => Ok(FindingValue::Unknown),
            ("positive", result) => Ok(FindingValue::Positive(result.unwrap_or("").to_string())),
            _ => Err(MalformedValue(s.to_string())),
        }
    }
}

/// Supervisor-owned record of the current situation: findings, accepted stage
/// results and questions awaiting the user. Every mutation stamps a new
/// version.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingMemory {
    findings: BTreeMap<String, FindingValue>,
    stage_results: BTreeMap<StageKind, String>,
    version: u64,
    pending_questions: VecDeque<String>,
}

static UNKNOWN: FindingValue = FindingValue::Unknown;

impl WorkingMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a memory holding `findings`, as if each had been recorded in
    /// order. Mainly for tests and offline evaluation.
    pub fn from_findings<I, S>(findings: I) -> Self
    where
        I: IntoIterator<Item = (S, FindingValue)>,
        S: Into<String>,
    {
        let mut memory = Self::new();
        for (sign, value) in findings {
            memory.record_finding(sign, value);
        }
        memory
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn finding(&self, sign: &str) -> &FindingValue {
        self.findings.get(sign).unwrap_or(&UNKNOWN)
    }

    pub fn findings(&self) -> &BTreeMap<String, FindingValue> {
        &self.findings
    }

    /// Findings whose value is known.
    pub fn known_findings(&self) -> BTreeMap<String, FindingValue> {
        self.findings
            .iter()
            .filter(|(_, v)| v.is_known())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn stage_result(&self, stage: StageKind) -> Option<&str> {
        self.stage_results.get(&stage).map(String::as_str)
    }

    pub fn stage_results(&self) -> &BTreeMap<StageKind, String> {
        &self.stage_results
    }

    pub fn pending_questions(&self) -> &VecDeque<String> {
        &self.pending_questions
    }

    pub fn is_pending(&self, sign: &str) -> bool {
        self.pending_questions.iter().any(|s| s == sign)
    }

    /// Records a finding, clearing any pending question for the sign.
    /// Returns the new version.
    pub fn record_finding(&mut self, sign: impl Into<String>, value: FindingValue) -> u64 {
        let sign = sign.into();
        self.pending_questions.retain(|s| *s != sign);
        self.findings.insert(sign, value);
        self.bump()
    }

    /// Queues a question for the user. Returns the new version.
    pub fn enqueue_question(&mut self, sign: impl Into<String>) -> u64 {
        self.pending_questions.push_back(sign.into());
        self.bump()
    }

    pub fn set_stage_result(&mut self, stage: StageKind, value: impl Into<String>) -> u64 {
        self.stage_results.insert(stage, value.into());
        self.bump()
    }

    fn bump(&mut self) -> u64 {
        self.version += 1;
        self.version
    }
}
