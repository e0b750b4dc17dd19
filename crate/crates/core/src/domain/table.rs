use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::automaton::{AutomatonDocument, GuardExpr, Transition};
use crate::stage::StageKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisRow {
    pub id: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrognosisRow {
    pub diagnosis: String,
    pub id: String,
    pub severity: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TherapyRow {
    pub diagnosis: String,
    pub id: String,
    pub text: String,
    /// Therapies whose content this one reuses.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub includes: Vec<String>,
}

/// Diagnosis to prognosis and therapy mapping of the knowledge pack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalTable {
    pub diagnoses: Vec<DiagnosisRow>,
    pub prognosis: Vec<PrognosisRow>,
    pub therapy: Vec<TherapyRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("unknown diagnosis `{0}`")]
    UnknownDiagnosis(String),
    #[error("diagnosis `{0}` is intermediate and has no table entry")]
    IntermediateDiagnosis(String),
    #[error("duplicate table entry `{0}`")]
    DuplicateEntry(String),
    #[error("table row `{row}` refers to unknown entry `{target}`")]
    DanglingReference { row: String, target: String },
}

impl ClinicalTable {
    pub fn diagnosis(&self, id: &str) -> Option<&DiagnosisRow> {
        self.diagnoses.iter().find(|d| d.id == id)
    }

    /// Diagnoses with both a prognosis and a therapy entry.
    pub fn final_diagnoses(&self) -> BTreeSet<&str> {
        self.prognosis
            .iter()
            .map(|p| p.diagnosis.as_str())
            .filter(|d| self.therapy.iter().any(|t| t.diagnosis == *d))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TableError> {
        let mut seen = BTreeSet::new();
        for d in &self.diagnoses {
            if !seen.insert(d.id.as_str()) {
                return Err(TableError::DuplicateEntry(d.id.clone()));
            }
        }
        // Two diagnoses may share a row id only when the rows say the same.
        let mut rows: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
        let contents = self
            .prognosis
            .iter()
            .map(|p| (p.id.as_str(), ("prognosis", p.severity.as_str())))
            .chain(
                self.therapy
                    .iter()
                    .map(|t| (t.id.as_str(), ("therapy", t.text.as_str()))),
            );
        for (id, content) in contents {
            if seen.contains(id) || rows.insert(id, content).is_some_and(|previous| previous != content) {
                return Err(TableError::DuplicateEntry(id.to_string()));
            }
        }
        let mut keyed = BTreeSet::new();
        for p in &self.prognosis {
            self.check_diagnosis(&p.id, &p.diagnosis)?;
            if !keyed.insert(("prognosis", p.diagnosis.as_str())) {
                return Err(TableError::DuplicateEntry(p.diagnosis.clone()));
            }
        }
        for t in &self.therapy {
            self.check_diagnosis(&t.id, &t.diagnosis)?;
            if !keyed.insert(("therapy", t.diagnosis.as_str())) {
                return Err(TableError::DuplicateEntry(t.diagnosis.clone()));
            }
            for included in &t.includes {
                if !self.therapy.iter().any(|other| &other.id == included) {
                    return Err(TableError::DanglingReference {
                        row: t.id.clone(),
                        target: included.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_diagnosis(&self, row: &str, diagnosis: &str) -> Result<(), TableError> {
        match self.diagnosis(diagnosis) {
            Some(_) => Ok(()),
            None => Err(TableError::DanglingReference {
                row: row.to_string(),
                target: diagnosis.to_string(),
            }),
        }
    }

    fn unresolved(&self, diagnosis: &str) -> TableError {
        if self.diagnosis(diagnosis).is_some() {
            TableError::IntermediateDiagnosis(diagnosis.to_string())
        } else {
            TableError::UnknownDiagnosis(diagnosis.to_string())
        }
    }

    pub fn lookup_prognosis(&self, diagnosis: &str) -> Result<&PrognosisRow, TableError> {
        self.prognosis
            .iter()
            .find(|p| p.diagnosis == diagnosis)
            .ok_or_else(|| self.unresolved(diagnosis))
    }

    pub fn lookup_therapy(&self, diagnosis: &str) -> Result<&TherapyRow, TableError> {
        self.therapy
            .iter()
            .find(|t| t.diagnosis == diagnosis)
            .ok_or_else(|| self.unresolved(diagnosis))
    }

    /// Prognosis automaton: one transition per table row, keyed on the
    /// validated diagnosis.
    pub fn prognosis_automaton(&self, id: &str) -> AutomatonDocument {
        let rows = self.prognosis.iter().map(|p| (p.diagnosis.as_str(), p.id.as_str()));
        lookup_automaton(id, StageKind::Prognosis, rows)
    }

    pub fn therapy_automaton(&self, id: &str) -> AutomatonDocument {
        let rows = self.therapy.iter().map(|t| (t.diagnosis.as_str(), t.id.as_str()));
        lookup_automaton(id, StageKind::Therapy, rows)
    }
}

fn lookup_automaton<'a>(
    id: &str,
    stage: StageKind,
    rows: impl Iterator<Item = (&'a str, &'a str)>,
) -> AutomatonDocument {
    let mut states = vec!["Start".to_string()];
    let mut transitions = Vec::new();
    for (priority, (diagnosis, target)) in rows.enumerate() {
        if !states.iter().any(|s| s == target) {
            states.push(target.to_string());
        }
        transitions.push(Transition {
            from: "Start".into(),
            to: target.to_string(),
            priority: priority as i64,
            guard: GuardExpr::StageResult(StageKind::Diagnosis, diagnosis.to_string()),
        });
    }
    AutomatonDocument {
        id: id.to_string(),
        stage,
        note: Some("Generated from the clinical table.".into()),
        terminal: states[1..].to_vec(),
        states,
        initial: "Start".into(),
        transitions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ClinicalTable {
        serde_json::from_str(
            r#"{"diagnoses": [{"id": "D0", "label": "root"}, {"id": "D1", "label": "leaf"}],
                "prognosis": [{"diagnosis": "D1", "id": "P1", "severity": "mild"}],
                "therapy": [{"diagnosis": "D1", "id": "T1", "text": "rest"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn lookups_distinguish_intermediate_and_unknown() {
        let t = table();
        assert_eq!(t.lookup_prognosis("D1").unwrap().id, "P1");
        assert_eq!(t.lookup_therapy("D1").unwrap().text, "rest");
        assert_eq!(
            t.lookup_prognosis("D0"),
            Err(TableError::IntermediateDiagnosis("D0".into()))
        );
        assert_eq!(t.lookup_therapy("D9"), Err(TableError::UnknownDiagnosis("D9".into())));
        assert_eq!(t.final_diagnoses(), BTreeSet::from(["D1"]));
    }

    #[test]
    fn validation_catches_dangling_rows() {
        let mut t = table();
        assert!(t.validate().is_ok());
        t.therapy[0].includes.push("T7".into());
        assert!(matches!(t.validate(), Err(TableError::DanglingReference { .. })));
        t.therapy[0].includes.clear();
        t.prognosis.push(PrognosisRow {
            diagnosis: "D1".into(),
            id: "P2".into(),
            severity: "x".into(),
        });
        assert_eq!(t.validate(), Err(TableError::DuplicateEntry("D1".into())));
    }

    #[test]
    fn generated_automaton_is_keyed_on_diagnosis() {
        let doc = table().prognosis_automaton("p");
        assert_eq!(doc.states, ["Start", "P1"]);
        assert_eq!(doc.terminal, ["P1"]);
        assert_eq!(
            doc.transitions[0].guard,
            GuardExpr::StageResult(StageKind::Diagnosis, "D1".into())
        );
    }

    #[test]
    fn diagnoses_may_share_an_identical_row() {
        let mut t = table();
        t.diagnoses.push(DiagnosisRow {
            id: "D2".into(),
            label: "other leaf".into(),
        });
        t.prognosis.push(PrognosisRow {
            diagnosis: "D2".into(),
            id: "P1".into(),
            severity: "mild".into(),
        });
        assert!(t.validate().is_ok());
        assert_eq!(t.prognosis_automaton("p").states, ["Start", "P1"]);
        t.prognosis[1].severity = "grave".into();
        assert_eq!(t.validate(), Err(TableError::DuplicateEntry("P1".into())));
        t.prognosis[1].id = "D1".into();
        assert_eq!(t.validate(), Err(TableError::DuplicateEntry("D1".into())));
    }
}
