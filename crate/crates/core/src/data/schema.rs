use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How operators relate to a factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Machine settings an operator may change before a lot runs.
    Controllable,
    /// Environmental conditions that are measured but not set.
    NonControllable,
    /// Lot-definition parameters fixed by the production order.
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorKind {
    Continuous {
        /// Observed `[min, max]` in natural units.
        range: [f64; 2],
        /// Count-valued factor (generated values are rounded, plans fix it at its median).
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        integer: bool,
    },
    Discrete {
        states: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDef {
    pub name: String,
    pub role: Role,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl FactorDef {
    pub fn continuous(name: &str, role: Role, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            role,
            kind: FactorKind::Continuous {
                range: [min, max],
                integer: false,
            },
        }
    }

    pub fn count(name: &str, role: Role, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            role,
            kind: FactorKind::Continuous {
                range: [min, max],
                integer: true,
            },
        }
    }

    pub fn discrete(name: &str, role: Role, states: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            role,
            kind: FactorKind::Discrete {
                states: states.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FactorKind::Continuous { .. })
    }

    /// `[min, max]` for continuous factors.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            FactorKind::Continuous { range, .. } => Some((range[0], range[1])),
            FactorKind::Discrete { .. } => None,
        }
    }

    pub fn states(&self) -> Option<&[String]> {
        match &self.kind {
            FactorKind::Discrete { states } => Some(states),
            FactorKind::Continuous { .. } => None,
        }
    }

    /// Parses a raw text cell into a value of this factor.
    pub fn parse(&self, raw: &str) -> std::result::Result<FactorValue, String> {
        let raw = raw.trim();
        match &self.kind {
            FactorKind::Continuous { .. } => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("`{raw}` is not a number"))?;
                if !v.is_finite() {
                    return Err(format!("`{raw}` is not finite"));
                }
                Ok(FactorValue::Number(v))
            }
            FactorKind::Discrete { states } => {
                if states.iter().any(|s| s == raw) {
                    Ok(FactorValue::Level(raw.to_string()))
                } else {
                    Err(raw.to_string())
                }
            }
        }
    }

    /// Checks kind compatibility and coerces integral numbers to discrete labels.
    /// Range is not checked here.
    pub fn coerce(&self, value: &FactorValue) -> Result<FactorValue> {
        match (&self.kind, value) {
            (FactorKind::Continuous { .. }, FactorValue::Number(v)) => {
                if v.is_finite() {
                    Ok(FactorValue::Number(*v))
                } else {
                    Err(Error::InvalidValue {
                        factor: self.name.clone(),
                        message: "value is not finite".into(),
                    })
                }
            }
            (FactorKind::Continuous { .. }, FactorValue::Level(s)) => Err(Error::InvalidValue {
                factor: self.name.clone(),
                message: format!("expected a number, got `{s}`"),
            }),
            (FactorKind::Discrete { states }, v) => {
                let label = match v {
                    FactorValue::Level(s) => s.clone(),
                    FactorValue::Number(x) => x.to_string(),
                };
                if states.contains(&label) {
                    Ok(FactorValue::Level(label))
                } else {
                    Err(Error::InvalidValue {
                        factor: self.name.clone(),
                        message: format!("unknown state `{label}`"),
                    })
                }
            }
        }
    }

    /// Like [`FactorDef::coerce`], additionally enforcing the schema range.
    pub fn check_in_range(&self, value: &FactorValue) -> Result<FactorValue> {
        let v = self.coerce(value)?;
        if let (Some((min, max)), FactorValue::Number(x)) = (self.range(), &v) {
            if *x < min || *x > max {
                return Err(Error::OutOfRange {
                    factor: self.name.clone(),
                    value: *x,
                    min,
                    max,
                });
            }
        }
        Ok(v)
    }
}

/// A factor setting in natural units: a number for continuous factors, a state label otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorValue {
    Number(f64),
    Level(String),
}

impl FactorValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FactorValue::Number(v) => Some(*v),
            FactorValue::Level(_) => None,
        }
    }

    pub fn as_level(&self) -> Option<&str> {
        match self {
            FactorValue::Level(s) => Some(s),
            FactorValue::Number(_) => None,
        }
    }
}

impl fmt::Display for FactorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorValue::Number(v) => write!(f, "{v}"),
            FactorValue::Level(s) => f.write_str(s),
        }
    }
}

impl From<f64> for FactorValue {
    fn from(v: f64) -> Self {
        FactorValue::Number(v)
    }
}

impl From<&str> for FactorValue {
    fn from(s: &str) -> Self {
        FactorValue::Level(s.to_string())
    }
}

/// Factor settings keyed by factor name.
pub type FactorValues = BTreeMap<String, FactorValue>;

/// Ordered factor declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSchema {
    pub factors: Vec<FactorDef>,
}

impl FactorSchema {
    pub fn new(factors: Vec<FactorDef>) -> Result<Self> {
        let schema = Self { factors };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Schema("no factors declared".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.factors {
            if f.name.is_empty() || f.name.contains(',') {
                return Err(Error::Schema(format!("invalid factor name `{}`", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate factor `{}`", f.name)));
            }
            match &f.kind {
                FactorKind::Continuous { range, .. } => {
                    if !(range[0].is_finite() && range[1].is_finite() && range[0] < range[1]) {
                        return Err(Error::Schema(format!(
                            "factor `{}`: range must satisfy min < max",
                            f.name
                        )));
                    }
                }
                FactorKind::Discrete { states } => {
                    if states.len() < 2 {
                        return Err(Error::Schema(format!(
                            "factor `{}`: discrete factors need at least 2 states",
                            f.name
                        )));
                    }
                    let uniq: HashSet<_> = states.iter().collect();
                    if uniq.len() != states.len() {
                        return Err(Error::Schema(format!(
                            "factor `{}`: duplicate state labels",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// SHA-256 of the compact JSON form; stored in model files to pair models with schemas.
    pub fn fingerprint(&self) -> String {
        let compact = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn factor(&self, name: &str) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&FactorDef> {
        self.factor(name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &FactorDef> {
        self.factors.iter().filter(move |f| f.role == role)
    }

    /// Validates a full assignment of values: every factor present, no unknown names,
    /// kinds respected and (optionally) ranges enforced. Returns the coerced values.
    pub fn check_values(&self, values: &FactorValues, enforce_range: bool) -> Result<FactorValues> {
        for name in values.keys() {
            if self.factor(name).is_none() {
                return Err(Error::UnknownFactor(name.clone()));
            }
        }
        let mut out = FactorValues::new();
        for f in &self.factors {
            let v = values
                .get(&f.name)
                .ok_or_else(|| Error::MissingValue(f.name.clone()))?;
            let v = if enforce_range {
                f.check_in_range(v)?
            } else {
                f.coerce(v)?
            };
            out.insert(f.name.clone(), v);
        }
        Ok(out)
    }

    /// The lacquering workstation layout: 9 continuous factors and two 3-state
    /// discrete ones (15 encoded inputs, 6 of them binary).
    pub fn lacquering() -> Self {
        use Role::*;
        Self::new(vec![
            FactorDef::continuous("load_factor", Controllable, 0.5, 1.0),
            FactorDef::discrete("passes", Protocol, &["1", "2", "3"]),
            FactorDef::continuous("time_per_table", Protocol, 5.0, 25.0),
            FactorDef::continuous("liters_per_table", Controllable, 0.5, 3.0),
            FactorDef::continuous("basis_weight", Controllable, 80.0, 200.0),
            FactorDef::discrete("layers", Protocol, &["1", "2", "3"]),
            FactorDef::count("products", Protocol, 1.0, 40.0),
            FactorDef::continuous("drying_time", Controllable, 20.0, 120.0),
            FactorDef::continuous("temperature", NonControllable, 12.0, 32.0),
            FactorDef::continuous("humidity", NonControllable, 30.0, 80.0),
            FactorDef::continuous("pressure", NonControllable, 990.0, 1030.0),
        ])
        .expect("built-in schema is valid")
    }
}
