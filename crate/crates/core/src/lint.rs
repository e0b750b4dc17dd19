//! Static checks over a knowledge pack directory. Every problem found is
//! reported; checks that depend on a file which failed to load are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::automaton::{
    check_ambiguity, load_automaton, reachable_final_states, Automaton, AutomatonError, EnumerationMode, StepOutcome,
    DEFAULT_SIGN_CAP,
};
use crate::domain::{
    in_dir, parse, read_pack_dir, required, ClinicalTable, PackError, PackFiles, PackManifest, Scenario, SignDef,
    AUTOMATA_DIR, MANIFEST, ONTOLOGY, SCENARIOS_DIR, SIGNS, TABLE,
};
use crate::memory::{SignSet, WorkingMemory};
use crate::ontology::{load_ontology, OntologyGraph, SIGN_CATEGORY_ATTRIBUTE};
use crate::stage::StageKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Stable machine-readable kind, e.g. `unknown_sign` or `table_mismatch`.
    pub code: String,
    /// Pack file the violation was found in.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: [{}] {}", self.path, self.code, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub pack: String,
    pub violations: Vec<Violation>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: &str, path: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            code: code.to_string(),
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn pack_error(&mut self, path: &str, error: PackError) {
        let code = match &error {
            PackError::MissingFile { .. } => "missing_file",
            PackError::Json { .. } => "invalid_json",
            _ => "invalid_pack",
        };
        self.push(code, path, error.to_string());
    }
}

/// Lints the pack directory at `dir`.
pub fn lint_pack(dir: impl AsRef<Path>) -> LintReport {
    let dir = dir.as_ref();
    match read_pack_dir(dir) {
        Ok(files) => lint_files(&files),
        Err(e) => {
            let mut report = LintReport::default();
            report.push("unreadable", &dir.display().to_string(), e.to_string());
            report
        }
    }
}

pub fn automaton_error_code(error: &AutomatonError) -> &'static str {
    match error {
        AutomatonError::Parse(_) => "invalid_json",
        AutomatonError::GuardSyntax { .. } => "guard_syntax",
        AutomatonError::UnknownState { .. } => "unknown_state",
        AutomatonError::DuplicateState(_) => "duplicate_state",
        AutomatonError::UnknownSign { .. } => "unknown_sign",
        AutomatonError::DuplicatePriority { .. } => "duplicate_priority",
        AutomatonError::UnreachableInitial { .. } => "unreachable_initial",
        AutomatonError::StepBudgetExceeded { .. } => "step_budget",
        AutomatonError::SignSpaceTooLarge { .. } => "sign_space_too_large",
    }
}

/// Lints pack content already read into memory.
pub fn lint_files(files: &PackFiles) -> LintReport {
    let mut report = LintReport::default();
    let load = |report: &mut LintReport, path: &str| -> Option<String> {
        match required(files, path) {
            Ok(text) => Some(text.to_string()),
            Err(e) => {
                report.pack_error(path, e);
                None
            }
        }
    };

    if let Some(text) = load(&mut report, MANIFEST) {
        match parse::<PackManifest>(MANIFEST, &text) {
            Ok(manifest) => report.pack = manifest.id,
            Err(e) => report.pack_error(MANIFEST, e),
        }
    }

    let signs: Option<Vec<SignDef>> =
        load(&mut report, SIGNS).and_then(|text| parse(SIGNS, &text).map_err(|e| report.pack_error(SIGNS, e)).ok());
    let mut sign_set = SignSet::new();
    for sign in signs.iter().flatten() {
        if sign_set.contains(&sign.id) {
            report.push("duplicate_sign", SIGNS, format!("sign `{}` is declared twice", sign.id));
        }
        sign_set.insert(sign.id.clone(), sign.kind);
    }

    let table: Option<ClinicalTable> = load(&mut report, TABLE).and_then(|text| {
        let table: ClinicalTable = parse(TABLE, &text).map_err(|e| report.pack_error(TABLE, e)).ok()?;
        match table.validate() {
            Ok(()) => Some(table),
            Err(e) => {
                report.push("invalid_table", TABLE, e.to_string());
                None
            }
        }
    });

    let ontology: Option<OntologyGraph> = load(&mut report, ONTOLOGY).and_then(|text| {
        load_ontology(&text)
            .map_err(|e| report.push("invalid_ontology", ONTOLOGY, e.to_string()))
            .ok()
    });

    let mut automata: BTreeMap<StageKind, (String, Automaton)> = BTreeMap::new();
    let mut stages_seen = BTreeMap::new();
    for (path, text) in in_dir(files, AUTOMATA_DIR) {
        if let Some(stage) = declared_stage(text) {
            if let Some(first) = stages_seen.insert(stage, path.clone()) {
                report.push(
                    "duplicate_stage",
                    path,
                    format!("stage {stage} is already declared by {first}"),
                );
                continue;
            }
        }
        match load_automaton(text, &sign_set) {
            Ok(automaton) => {
                automata.insert(automaton.stage, (path.clone(), automaton));
            }
            Err(e) => report.push(automaton_error_code(&e), path, e.to_string()),
        }
    }
    for stage in [StageKind::General].iter().chain(StageKind::CLINICAL.iter()) {
        if !stages_seen.contains_key(stage) {
            report.push(
                "missing_automaton",
                AUTOMATA_DIR,
                format!("no automaton for stage {stage}"),
            );
        }
    }

    for (path, text) in in_dir(files, SCENARIOS_DIR) {
        match parse::<Scenario>(path, text) {
            Ok(scenario) => {
                for sign in scenario.findings.keys().filter(|s| !sign_set.contains(s)) {
                    report.push("unknown_sign", path, format!("finding on undeclared sign `{sign}`"));
                }
            }
            Err(e) => report.pack_error(path, e),
        }
    }

    if let Some((path, general)) = automata.get(&StageKind::General) {
        check_general(&mut report, path, general);
    }
    for (stage, (path, automaton)) in &automata {
        if *stage == StageKind::General {
            continue;
        }
        match check_ambiguity(automaton, &sign_set, EnumerationMode::KnownOnly, DEFAULT_SIGN_CAP) {
            Ok(conflicts) => {
                for c in conflicts {
                    report.push(
                        "ambiguous_guards",
                        path,
                        format!(
                            "state {}: transitions {:?} are simultaneously true for {}",
                            c.state,
                            c.transitions,
                            describe(&c.assignment.findings)
                        ),
                    );
                }
            }
            Err(e) => report.push(automaton_error_code(&e), path, e.to_string()),
        }
    }
    if let Some(table) = &table {
        if let Some((path, diagnosis)) = automata.get(&StageKind::Diagnosis) {
            check_diagnosis(&mut report, path, diagnosis, table, &sign_set);
        }
        for stage in [StageKind::Prognosis, StageKind::Therapy] {
            if let Some((path, automaton)) = automata.get(&stage) {
                check_lookup(&mut report, path, automaton, table);
            }
        }
    }
    if let (Some(ontology), Some(signs)) = (&ontology, &signs) {
        for sign in signs {
            match ontology.concept(&sign.id) {
                None => report.push(
                    "sign_without_concept",
                    ONTOLOGY,
                    format!("sign `{}` has no ontology concept", sign.id),
                ),
                Some(concept) => {
                    if concept.sign_category().is_some_and(|c| c != sign.category) {
                        report.push(
                            "sign_category_mismatch",
                            ONTOLOGY,
                            format!(
                                "concept `{}` declares a {} different from signs.json",
                                sign.id, SIGN_CATEGORY_ATTRIBUTE
                            ),
                        );
                    }
                }
            }
        }
    }
    report
}

fn declared_stage(text: &str) -> Option<StageKind> {
    let value: serde_json::Value = serde_json::from_str(text).ok()?;
    serde_json::from_value(value.get("stage")?.clone()).ok()
}

fn describe(findings: &BTreeMap<String, crate::memory::FindingValue>) -> String {
    findings
        .iter()
        .map(|(sign, value)| format!("{sign}={}", value.class()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_general(report: &mut LintReport, path: &str, general: &Automaton) {
    for state in &general.states {
        if *state == general.initial || general.is_terminal(state) {
            continue;
        }
        match StageKind::from_state_label(state) {
            Some(stage) if stage != StageKind::General => {}
            _ => report.push("general_stage", path, format!("state {state} names no clinical stage")),
        }
    }
}

fn check_diagnosis(report: &mut LintReport, path: &str, automaton: &Automaton, table: &ClinicalTable, signs: &SignSet) {
    let finals = table.final_diagnoses();
    for terminal in &automaton.terminal {
        if !finals.contains(terminal.as_str()) {
            report.push(
                "intermediate_terminal",
                path,
                format!("terminal state {terminal} has no prognosis and therapy row"),
            );
        }
    }
    match reachable_final_states(automaton, signs, DEFAULT_SIGN_CAP) {
        Ok(reached) => {
            for diagnosis in finals.iter().filter(|d| !reached.contains_key(**d)) {
                report.push(
                    "unreachable_diagnosis",
                    path,
                    format!("no complete assignment of known findings reaches {diagnosis}"),
                );
            }
        }
        Err(e) => report.push(automaton_error_code(&e), path, e.to_string()),
    }
}

/// The lookup automaton run from each diagnosis must end exactly where the
/// table says, and nowhere for intermediate diagnoses.
fn check_lookup(report: &mut LintReport, path: &str, automaton: &Automaton, table: &ClinicalTable) {
    let rows: BTreeMap<&str, &str> = match automaton.stage {
        StageKind::Prognosis => table
            .prognosis
            .iter()
            .map(|p| (p.diagnosis.as_str(), p.id.as_str()))
            .collect(),
        _ => table
            .therapy
            .iter()
            .map(|t| (t.diagnosis.as_str(), t.id.as_str()))
            .collect(),
    };
    for diagnosis in &table.diagnoses {
        let mut memory = WorkingMemory::new();
        memory.set_stage_result(StageKind::Diagnosis, diagnosis.id.clone());
        let reached = match automaton.run_to_terminal(&memory) {
            Ok(run) if run.outcome == StepOutcome::Terminal => Some(run.final_state),
            Ok(_) => None,
            Err(e) => {
                report.push(automaton_error_code(&e), path, e.to_string());
                continue;
            }
        };
        let expected = rows.get(diagnosis.id.as_str()).copied();
        if reached.as_deref() != expected {
            report.push(
                "table_mismatch",
                path,
                format!(
                    "from {} the table gives {} but the automaton reaches {}",
                    diagnosis.id,
                    expected.unwrap_or("no row"),
                    reached.as_deref().unwrap_or("no terminal state")
                ),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainPack;

    fn shipped() -> PackFiles {
        DomainPack::builtin().files().clone()
    }

    #[test]
    fn shipped_pack_is_clean() {
        let report = lint_files(&shipped());
        assert_eq!(report.pack, "acute-diarrhea");
        assert!(report.is_clean(), "{:#?}", report.violations);
    }

    #[test]
    fn undeclared_guard_sign_is_one_violation() {
        let mut files = shipped();
        let path = "automata/diagnosis.json";
        let text = files[path].replace(r#""guard": ["positive", "SE6"]}"#, r#""guard": ["positive", "SE9"]}"#);
        assert_ne!(text, files[path]);
        files.insert(path.into(), text);
        let report = lint_files(&files);
        let codes: Vec<&str> = report.violations.iter().map(|v| v.code.as_str()).collect();
        assert_eq!(codes, ["unknown_sign"], "{:#?}", report.violations);
        assert_eq!(report.violations[0].path, path);
    }

    #[test]
    fn table_disagreeing_with_automaton_is_one_violation() {
        let mut files = shipped();
        let mut table: serde_json::Value = serde_json::from_str(&files[TABLE]).unwrap();
        let row = table["prognosis"]
            .as_array_mut()
            .unwrap()
            .iter_mut()
            .find(|r| r["diagnosis"] == "Δ1")
            .unwrap();
        row["id"] = "Π3".into();
        row["severity"] = "Curable".into();
        files.insert(TABLE.into(), table.to_string());
        let report = lint_files(&files);
        assert_eq!(report.violations.len(), 1, "{:#?}", report.violations);
        let v = &report.violations[0];
        assert_eq!(v.code, "table_mismatch");
        assert_eq!(v.path, "automata/prognosis.json");
        assert_eq!(v.message, "from Δ1 the table gives Π3 but the automaton reaches Π1");
    }

    #[test]
    fn every_problem_is_listed() {
        let mut files = shipped();
        files.remove("automata/follow_up.json");
        files.insert(ONTOLOGY.into(), "{".into());
        files.insert(
            "scenarios/extra.json".into(),
            r#"{"id": "x", "findings": {"ZZ": "present"}}"#.into(),
        );
        let report = lint_files(&files);
        let codes: Vec<&str> = report.violations.iter().map(|v| v.code.as_str()).collect();
        assert_eq!(codes, ["invalid_ontology", "missing_automaton", "unknown_sign"]);
    }

    #[test]
    fn overlapping_guards_are_reported() {
        let mut files = shipped();
        let path = "automata/diagnosis.json";
        let text = files[path].replace(
            r#"["and", ["present", "SE1"], ["absent", "SE6"],"#,
            r#"["and", ["present", "SE1"],"#,
        );
        files.insert(path.into(), text);
        let report = lint_files(&files);
        assert!(!report.is_clean());
        assert!(report.violations.iter().all(|v| v.code == "ambiguous_guards"));
        assert!(report.violations[0].message.starts_with("state Δ0: transitions [1, 3]"));
    }

    #[test]
    fn missing_directory_is_reported() {
        let report = lint_pack("/nonexistent/pack");
        assert_eq!(report.violations[0].code, "unreadable");
    }
}
