use std::collections::BTreeSet;
use std::fmt;
use std::ops::{BitAnd, BitOr, Not};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::memory::{FindingValue, WorkingMemory};
use crate::stage::StageKind;

/// Kleene truth value of a guard over a partially known situation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Truth {
    True,
    False,
    /// Depends on at least one sign that is still unknown.
    Indeterminate,
}

impl From<bool> for Truth {
    fn from(b: bool) -> Self {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }
}

impl Not for Truth {
    type Output = Truth;

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Indeterminate => Truth::Indeterminate,
        }
    }
}

impl BitAnd for Truth {
    type Output = Truth;

    fn bitand(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::Indeterminate, _) | (_, Truth::Indeterminate) => Truth::Indeterminate,
            _ => Truth::True,
        }
    }
}

impl BitOr for Truth {
    type Output = Truth;

    fn bitor(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::Indeterminate, _) | (_, Truth::Indeterminate) => Truth::Indeterminate,
            _ => Truth::False,
        }
    }
}

/// Matches any accepted result in `stage_result` guards.
pub const ANY_RESULT: &str = "*";

/// Boolean guard over working-memory findings and stage results.
///
/// Written in documents as a prefix-notation JSON array, e.g.
/// `["and", ["present", "SO1"], ["not", ["present", "SG"]]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GuardExpr {
    True,
    Present(String),
    Absent(String),
    Positive(String),
    Unknown(String),
    StageResult(StageKind, String),
    And(Vec<GuardExpr>),
    Or(Vec<GuardExpr>),
    Not(Box<GuardExpr>),
}

impl GuardExpr {
    pub fn present(sign: &str) -> Self {
        GuardExpr::Present(sign.to_string())
    }

    pub fn absent(sign: &str) -> Self {
        GuardExpr::Absent(sign.to_string())
    }

    pub fn positive(sign: &str) -> Self {
        GuardExpr::Positive(sign.to_string())
    }

    pub fn stage_result(stage: StageKind, value: &str) -> Self {
        GuardExpr::StageResult(stage, value.to_string())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: GuardExpr) -> Self {
        GuardExpr::Not(Box::new(inner))
    }

    pub fn evaluate(&self, memory: &WorkingMemory) -> Truth {
        let sign_test = |sign: &str, test: fn(&FindingValue) -> bool| match memory.finding(sign) {
            FindingValue::Unknown => Truth::Indeterminate,
            value => test(value).into(),
        };
        match self {
            GuardExpr::True => Truth::True,
            GuardExpr::Present(s) => sign_test(s, FindingValue::is_affirmative),
            GuardExpr::Absent(s) => sign_test(s, |v| *v == FindingValue::Absent),
            GuardExpr::Positive(s) => sign_test(s, |v| matches!(v, FindingValue::Positive(_))),
            GuardExpr::Unknown(s) => (!memory.finding(s).is_known()).into(),
            GuardExpr::StageResult(stage, value) => match memory.stage_result(*stage) {
                Some(result) => (value == ANY_RESULT || result == value).into(),
                None => Truth::False,
            },
            GuardExpr::And(items) => items.iter().fold(Truth::True, |acc, g| acc & g.evaluate(memory)),
            GuardExpr::Or(items) => items.iter().fold(Truth::False, |acc, g| acc | g.evaluate(memory)),
            GuardExpr::Not(inner) => !inner.evaluate(memory),
        }
    }

    /// Sign ids the guard mentions.
    pub fn signs(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_signs(&mut out);
        out
    }

    fn collect_signs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            GuardExpr::True | GuardExpr::StageResult(..) => {}
            GuardExpr::Present(s) | GuardExpr::Absent(s) | GuardExpr::Positive(s) | GuardExpr::Unknown(s) => {
                out.insert(s);
            }
            GuardExpr::And(items) | GuardExpr::Or(items) => items.iter().for_each(|g| g.collect_signs(out)),
            GuardExpr::Not(inner) => inner.collect_signs(out),
        }
    }

    /// (stage, value) pairs mentioned by `stage_result` predicates.
    pub fn stage_results(&self) -> BTreeSet<(StageKind, &str)> {
        let mut out = BTreeSet::new();
        self.collect_stage_results(&mut out);
        out
    }

    fn collect_stage_results<'a>(&'a self, out: &mut BTreeSet<(StageKind, &'a str)>) {
        match self {
            GuardExpr::StageResult(stage, value) => {
                out.insert((*stage, value.as_str()));
            }
            GuardExpr::And(items) | GuardExpr::Or(items) => items.iter().for_each(|g| g.collect_stage_results(out)),
            GuardExpr::Not(inner) => inner.collect_stage_results(out),
            _ => {}
        }
    }

    /// Mentioned signs whose value in `memory` is unknown.
    pub fn unknown_signs(&self, memory: &WorkingMemory) -> BTreeSet<String> {
        self.signs()
            .into_iter()
            .filter(|s| !memory.finding(s).is_known())
            .map(str::to_string)
            .collect()
    }

    pub fn to_value(&self) -> Value {
        use serde_json::json;
        let nary = |op: &str, items: &[GuardExpr]| {
            let mut v = vec![json!(op)];
            v.extend(items.iter().map(GuardExpr::to_value));
            Value::Array(v)
        };
        match self {
            GuardExpr::True => json!(true),
            GuardExpr::Present(s) => json!(["present", s]),
            GuardExpr::Absent(s) => json!(["absent", s]),
            GuardExpr::Positive(s) => json!(["positive", s]),
            GuardExpr::Unknown(s) => json!(["unknown", s]),
            GuardExpr::StageResult(stage, value) => json!(["stage_result", stage.name(), value]),
            GuardExpr::And(items) => nary("and", items),
            GuardExpr::Or(items) => nary("or", items),
            GuardExpr::Not(inner) => json!(["not", inner.to_value()]),
        }
    }

    pub fn from_value(value: &Value) -> Result<GuardExpr, String> {
        let items = match value {
            Value::Bool(true) => return Ok(GuardExpr::True),
            Value::Array(items) => items,
            other => return Err(format!("expected a prefix expression, found {other}")),
        };
        let (op, args) = items
            .split_first()
            .ok_or_else(|| "empty guard expression".to_string())?;
        let op = op
            .as_str()
            .ok_or_else(|| format!("operator must be a string, found {op}"))?;
        let text = |i: usize| -> Result<&str, String> {
            args.get(i)
                .and_then(Value::as_str)
                .ok_or_else(|| format!("`{op}` expects a string argument at position {}", i + 1))
        };
        let arity = |n: usize| -> Result<(), String> {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("`{op}` takes {n} argument(s), got {}", args.len()))
            }
        };
        match op {
            "true" => arity(0).map(|()| GuardExpr::True),
            "present" | "absent" | "positive" | "unknown" => {
                arity(1)?;
                let sign = text(0)?.to_string();
                Ok(match op {
                    "present" => GuardExpr::Present(sign),
                    "absent" => GuardExpr::Absent(sign),
                    "positive" => GuardExpr::Positive(sign),
                    _ => GuardExpr::Unknown(sign),
                })
            }
            "stage_result" => {
                arity(2)?;
                let stage = text(0)?.parse().map_err(|e| format!("{e}"))?;
                Ok(GuardExpr::StageResult(stage, text(1)?.to_string()))
            }
            "and" | "or" => {
                if args.is_empty() {
                    return Err(format!("`{op}` needs at least one operand"));
                }
                let items = args.iter().map(GuardExpr::from_value).collect::<Result<Vec<_>, _>>()?;
                Ok(if op == "and" {
                    GuardExpr::And(items)
                } else {
                    GuardExpr::Or(items)
                })
            }
            "not" => {
                arity(1)?;
                Ok(GuardExpr::not(GuardExpr::from_value(&args[0])?))
            }
            other => Err(format!("unknown guard operator `{other}`")),
        }
    }
}

impl fmt::Display for GuardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_value())
    }
}

impl Serialize for GuardExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GuardExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        GuardExpr::from_value(&value).map_err(serde::de::Error::custom)
    }
}
