use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The clinical stages ordered by the general automaton, plus the general
/// automaton itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageKind {
    Diagnosis,
    Prognosis,
    Therapy,
    FollowUp,
    General,
}

impl StageKind {
    pub const CLINICAL: [StageKind; 4] = [
        StageKind::Diagnosis,
        StageKind::Prognosis,
        StageKind::Therapy,
        StageKind::FollowUp,
    ];

    /// Greek symbol used for the stage in automata and tables.
    pub fn symbol(self) -> &'static str {
        match self {
            StageKind::Diagnosis => "Δ",
            StageKind::Prognosis => "Π",
            StageKind::Therapy => "Θ",
            StageKind::FollowUp => "SΘ",
            StageKind::General => "G",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Diagnosis => "Diagnosis",
            StageKind::Prognosis => "Prognosis",
            StageKind::Therapy => "Therapy",
            StageKind::FollowUp => "FollowUp",
            StageKind::General => "General",
        }
    }

    /// Maps a general-automaton state label (`Δ`, `Π`, `Θ`, `SΘ` or a stage
    /// name) to the clinical stage it stands for.
    pub fn from_state_label(label: &str) -> Option<StageKind> {
        match label {
            "Δ" => Some(StageKind::Diagnosis),
            "Π" => Some(StageKind::Prognosis),
            "Θ" => Some(StageKind::Therapy),
            "SΘ" => Some(StageKind::FollowUp),
            other => other.parse().ok().filter(|s| *s != StageKind::General),
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown stage `{0}`")]
pub struct UnknownStage(pub String);

impl FromStr for StageKind {
    type Err = UnknownStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Diagnosis" => Ok(StageKind::Diagnosis),
            "Prognosis" => Ok(StageKind::Prognosis),
            "Therapy" => Ok(StageKind::Therapy),
            "FollowUp" => Ok(StageKind::FollowUp),
            "General" => Ok(StageKind::General),
            other => Err(UnknownStage(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_labels_map_to_stages() {
        assert_eq!(StageKind::from_state_label("Δ"), Some(StageKind::Diagnosis));
        assert_eq!(StageKind::from_state_label("SΘ"), Some(StageKind::FollowUp));
        assert_eq!(StageKind::from_state_label("Therapy"), Some(StageKind::Therapy));
        assert_eq!(StageKind::from_state_label("General"), None);
        assert_eq!(StageKind::from_state_label("Done"), None);
    }

    #[test]
    fn round_trips_through_serde() {
        for stage in StageKind::CLINICAL {
            let json = serde_json::to_string(&stage).unwrap();
            assert_eq!(json, format!("\"{}\"", stage.name()));
            let back: StageKind = serde_json::from_str(&json).unwrap();
            assert_eq!(back, stage);
        }
    }
}
