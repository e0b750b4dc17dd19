//! Knowledge packs: signs, clinical table, automata, ontology and scenarios
//! of one clinical problem, loaded from a directory or from the built-in
//! acute-diarrhea pack.

mod scenario;
mod table;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::automaton::{load_automaton, Automaton, AutomatonError};
use crate::memory::{SignKind, SignSet};
use crate::ontology::{load_ontology, OntologyError, OntologyGraph, SignCategory};
use crate::stage::StageKind;

pub use scenario::{Scenario, ValidationPolicy};
pub use table::{ClinicalTable, DiagnosisRow, PrognosisRow, TableError, TherapyRow};

pub const BUILTIN_PACK_ID: &str = "acute-diarrhea";

pub(crate) const MANIFEST: &str = "pack.json";
pub(crate) const SIGNS: &str = "signs.json";
pub(crate) const TABLE: &str = "clinical_table.json";
pub(crate) const ONTOLOGY: &str = "ontology.json";
pub(crate) const AUTOMATA_DIR: &str = "automata";
pub(crate) const SCENARIOS_DIR: &str = "scenarios";

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing pack file")]
    MissingFile { path: PathBuf },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Ontology {
        path: PathBuf,
        #[source]
        source: OntologyError,
    },
    #[error("{path}: {source}")]
    Automaton {
        path: PathBuf,
        #[source]
        source: AutomatonError,
    },
    #[error("{path}: {source}")]
    Table {
        path: PathBuf,
        #[source]
        source: TableError,
    },
    #[error("duplicate sign `{0}`")]
    DuplicateSign(String),
    #[error("two automata declare stage {0}")]
    DuplicateStage(StageKind),
    #[error("no automaton for stage {0}")]
    MissingAutomaton(StageKind),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackManifest {
    pub id: String,
    pub domain: String,
    pub label: String,
    /// Problem keywords attached to every session of the pack.
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignDef {
    pub id: String,
    pub category: SignCategory,
    pub kind: SignKind,
    pub description: String,
}

/// Pack content as relative path to text.
pub type PackFiles = BTreeMap<String, String>;

#[derive(Clone, Debug)]
pub struct DomainPack {
    pub manifest: PackManifest,
    pub signs: Vec<SignDef>,
    pub table: ClinicalTable,
    pub general: Automaton,
    pub stages: BTreeMap<StageKind, Automaton>,
    pub ontology: OntologyGraph,
    pub scenarios: Vec<Scenario>,
    source: PackFiles,
}

macro_rules! builtin_files {
    ($($path:literal),* $(,)?) => {
        [$(($path, include_str!(concat!("../../packs/acute-diarrhea/", $path)))),*]
    };
}

fn builtin_files() -> PackFiles {
    builtin_files![
        "pack.json",
        "signs.json",
        "clinical_table.json",
        "ontology.json",
        "automata/general.json",
        "automata/diagnosis.json",
        "automata/prognosis.json",
        "automata/therapy.json",
        "automata/follow_up.json",
        "scenarios/viral.json",
        "scenarios/benign_bacterial.json",
        "scenarios/severe_bacterial.json",
    ]
    .into_iter()
    .map(|(path, text)| (path.to_string(), text.to_string()))
    .collect()
}

pub(crate) fn parse<T: serde::de::DeserializeOwned>(path: &str, text: &str) -> Result<T, PackError> {
    serde_json::from_str(text).map_err(|source| PackError::Json {
        path: path.into(),
        source,
    })
}

pub(crate) fn required<'a>(files: &'a PackFiles, path: &str) -> Result<&'a str, PackError> {
    files
        .get(path)
        .map(String::as_str)
        .ok_or_else(|| PackError::MissingFile { path: path.into() })
}

pub(crate) fn in_dir<'a>(files: &'a PackFiles, dir: &'a str) -> impl Iterator<Item = (&'a String, &'a String)> {
    files.iter().filter(move |(path, _)| {
        path.strip_prefix(dir)
            .and_then(|rest| rest.strip_prefix('/'))
            .is_some_and(|name| name.ends_with(".json") && !name.contains('/'))
    })
}

impl DomainPack {
    /// The acute-diarrhea pack compiled into the binary.
    pub fn builtin() -> Self {
        DomainPack::from_files(builtin_files()).expect("built-in pack is valid")
    }

    /// Reads a pack directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PackError> {
        DomainPack::from_files(read_pack_dir(dir.as_ref())?)
    }

    /// The built-in pack when `pack` names it and no such directory exists,
    /// otherwise the pack directory at `pack`.
    pub fn resolve(pack: &str) -> Result<Self, PackError> {
        let path = Path::new(pack);
        if pack == BUILTIN_PACK_ID && !path.is_dir() {
            Ok(DomainPack::builtin())
        } else {
            DomainPack::load(path)
        }
    }

    pub fn from_files(files: PackFiles) -> Result<Self, PackError> {
        let manifest: PackManifest = parse(MANIFEST, required(&files, MANIFEST)?)?;
        let signs: Vec<SignDef> = parse(SIGNS, required(&files, SIGNS)?)?;
        let mut sign_set = SignSet::new();
        for sign in &signs {
            if sign_set.contains(&sign.id) {
                return Err(PackError::DuplicateSign(sign.id.clone()));
            }
            sign_set.insert(sign.id.clone(), sign.kind);
        }
        let table: ClinicalTable = parse(TABLE, required(&files, TABLE)?)?;
        table.validate().map_err(|source| PackError::Table {
            path: TABLE.into(),
            source,
        })?;
        let ontology = load_ontology(required(&files, ONTOLOGY)?).map_err(|source| PackError::Ontology {
            path: ONTOLOGY.into(),
            source,
        })?;
        let mut automata: BTreeMap<StageKind, Automaton> = BTreeMap::new();
        for (path, text) in in_dir(&files, AUTOMATA_DIR) {
            let automaton = load_automaton(text, &sign_set).map_err(|source| PackError::Automaton {
                path: path.into(),
                source,
            })?;
            let stage = automaton.stage;
            if automata.insert(stage, automaton).is_some() {
                return Err(PackError::DuplicateStage(stage));
            }
        }
        let general = automata
            .remove(&StageKind::General)
            .ok_or(PackError::MissingAutomaton(StageKind::General))?;
        if let Some(stage) = StageKind::CLINICAL.iter().find(|s| !automata.contains_key(s)) {
            return Err(PackError::MissingAutomaton(*stage));
        }
        let scenarios = in_dir(&files, SCENARIOS_DIR)
            .map(|(path, text)| parse::<Scenario>(path, text))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DomainPack {
            manifest,
            signs,
            table,
            general,
            stages: automata,
            ontology,
            scenarios,
            source: files,
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn domain(&self) -> &str {
        &self.manifest.domain
    }

    pub fn files(&self) -> &PackFiles {
        &self.source
    }

    pub fn sign_set(&self) -> SignSet {
        self.signs.iter().map(|s| (s.id.clone(), s.kind)).collect()
    }

    pub fn sign(&self, id: &str) -> Option<&SignDef> {
        self.signs.iter().find(|s| s.id == id)
    }

    pub fn sign_categories(&self) -> BTreeMap<String, SignCategory> {
        self.signs.iter().map(|s| (s.id.clone(), s.category)).collect()
    }

    pub fn automaton(&self, stage: StageKind) -> Option<&Automaton> {
        if stage == StageKind::General {
            Some(&self.general)
        } else {
            self.stages.get(&stage)
        }
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Human-readable label of a stage result.
    pub fn result_label(&self, stage: StageKind, value: &str) -> Option<String> {
        match stage {
            StageKind::Diagnosis => self.table.diagnosis(value).map(|d| d.label.clone()),
            StageKind::Prognosis => self
                .table
                .prognosis
                .iter()
                .find(|p| p.id == value)
                .map(|p| p.severity.clone()),
            StageKind::Therapy => self
                .table
                .therapy
                .iter()
                .find(|t| t.id == value)
                .map(|t| t.text.clone()),
            StageKind::FollowUp | StageKind::General => None,
        }
    }
}

/// Reads every JSON file of a pack directory, one level into `automata/` and
/// `scenarios/`.
pub fn read_pack_dir(dir: &Path) -> Result<PackFiles, PackError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PackError::Io { path, source }
    };
    let mut files = PackFiles::new();
    for sub in ["", AUTOMATA_DIR, SCENARIOS_DIR] {
        let folder = dir.join(sub);
        if !sub.is_empty() && !folder.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&folder).map_err(io(&folder))? {
            let path = entry.map_err(io(&folder))?.path();
            if path.extension().is_some_and(|e| e == "json") && path.is_file() {
                let name = path.file_name().unwrap_or_default().to_string_lossy();
                let key = if sub.is_empty() {
                    name.to_string()
                } else {
                    format!("{sub}/{name}")
                };
                files.insert(key, fs::read_to_string(&path).map_err(io(&path))?);
            }
        }
    }
    Ok(files)
}
