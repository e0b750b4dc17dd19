use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::memory::FindingValue;
use crate::stage::StageKind;

/// How the headless runner answers validation requests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationPolicy {
    /// Validate the first proposal received for each stage.
    #[default]
    ValidateFirst,
    /// Reject every proposal; the session can only end stuck.
    RejectAll,
}

/// A scripted consultation: initial findings and the expected stage results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Set when the findings were reconstructed rather than taken from a
    /// recorded consultation.
    #[serde(default)]
    pub reconstructed: bool,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub findings: BTreeMap<String, FindingValue>,
    #[serde(default)]
    pub policy: ValidationPolicy,
    #[serde(default)]
    pub expected: BTreeMap<StageKind, String>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
