//! Declarative feature vocabulary for a cohort.
//!
//! A schema document is TOML:
//!
//! ```toml
//! schema_version = 1
//! outcomes = ["prolonged_mv"]
//!
//! [[features]]
//! name = "glucose"
//! display_name = "Serum Glucose"
//! kind = { type = "numerical", min = 40, max = 600, unit = "mg/dL" }
//! mutable = true
//! tags = ["lab"]
//! normal_range = [70, 140]
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_SCHEMA: &str = include_str!("../assets/default_schema.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTag {
    Lab,
    Comorbidity,
    Demographic,
    Admission,
    Surgery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureKind {
    Binary,
    Categorical { levels: Vec<String> },
    Numerical { min: f64, max: f64, unit: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub display_name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub mutable: bool,
    #[serde(default)]
    pub tags: BTreeSet<FeatureTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_range: Option<(f64, f64)>,
    /// Decimal places used when displaying (and rounding suggested) values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<u32>,
}

impl FeatureSpec {
    pub fn has_tag(&self, tag: FeatureTag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn is_lab(&self) -> bool {
        self.has_tag(FeatureTag::Lab)
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.kind, FeatureKind::Numerical { .. })
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.kind, FeatureKind::Binary)
    }

    /// `(min, max)` for numerical features.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            FeatureKind::Numerical { min, max, .. } => Some((min, max)),
            _ => None,
        }
    }

    pub fn unit(&self) -> Option<&str> {
        match &self.kind {
            FeatureKind::Numerical { unit, .. } => Some(unit.as_str()),
            _ => None,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            _ => None,
        }
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels()?.iter().position(|l| l == level)
    }

    /// Missing values are only representable for numerical lab features.
    pub fn allows_missing(&self) -> bool {
        self.is_lab() && self.is_numerical()
    }

    /// Rounds `x` to the display precision, if one is declared.
    pub fn round_to_precision(&self, x: f64) -> f64 {
        match self.precision {
            Some(p) => {
                let scale = 10f64.powi(p as i32);
                (x * scale).round() / scale
            }
            None => x,
        }
    }

    /// Formats a numeric amount in this feature's units, e.g. `7.1 g/dL`.
    pub fn format_number(&self, x: f64) -> String {
        let body = match self.precision {
            Some(p) => format!("{:.*}", p as usize, x),
            None => format_trimmed(x),
        };
        match self.unit() {
            Some(u) if !u.is_empty() => format!("{body} {u}"),
            _ => body,
        }
    }

    fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("features.{}.{}", self.name, f);
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(Error::schema(
                field("name"),
                format!("`{}` is not an identifier", self.name),
            ));
        }
        match &self.kind {
            FeatureKind::Binary => {}
            FeatureKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::schema(field("kind.levels"), "level list is empty"));
                }
                let mut seen = HashSet::new();
                for l in levels {
                    if !seen.insert(l.as_str()) {
                        return Err(Error::schema(
                            field("kind.levels"),
                            format!("duplicate level `{l}`"),
                        ));
                    }
                }
            }
            FeatureKind::Numerical { min, max, .. } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::schema(
                        field("kind"),
                        format!("numerical bounds must satisfy min < max (got {min}, {max})"),
                    ));
                }
            }
        }
        if let Some((lo, hi)) = self.normal_range {
            let Some((min, max)) = self.range() else {
                return Err(Error::schema(
                    field("normal_range"),
                    "normal_range is only valid on numerical features",
                ));
            };
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(Error::schema(
                    field("normal_range"),
                    format!("({lo}, {hi}) does not lie within [{min}, {max}]"),
                ));
            }
        }
        if self.mutable {
            if !self.is_lab() {
                return Err(Error::schema(
                    field("mutable"),
                    "only lab-tagged features may be mutable",
                ));
            }
            if !self.is_numerical() {
                return Err(Error::schema(
                    field("mutable"),
                    "only numerical features may be mutable",
                ));
            }
        }
        Ok(())
    }
}

/// Shortest round-tripping decimal without a trailing `.0`.
pub(crate) fn format_trimmed(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub schema_version: u32,
    pub outcomes: Vec<String>,
    pub features: Vec<FeatureSpec>,
}

impl CohortSchema {
    pub fn new(features: Vec<FeatureSpec>, outcomes: Vec<String>) -> Result<Self> {
        let schema = CohortSchema {
            schema_version: SCHEMA_VERSION,
            outcomes,
            features,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: CohortSchema =
            toml::from_str(text).map_err(|e| Error::Parse(format!("schema document: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    /// The bundled desk-scale surgical schema.
    pub fn default_surgical() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if self.outcomes.is_empty() {
            return Err(Error::schema("outcomes", "at least one outcome is required"));
        }
        let mut seen = HashSet::new();
        for o in &self.outcomes {
            if o.is_empty() || !seen.insert(o.as_str()) {
                return Err(Error::schema(
                    "outcomes",
                    format!("outcome name `{o}` is empty or duplicated"),
                ));
            }
        }
        if self.features.is_empty() {
            return Err(Error::schema("features", "at least one feature is required"));
        }
        let mut names = HashSet::new();
        for f in &self.features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::schema(
                    format!("features.{}", f.name),
                    "duplicate feature name",
                ));
            }
            if self.outcomes.iter().any(|o| o == &f.name) || f.name == "id" {
                return Err(Error::schema(
                    format!("features.{}", f.name),
                    "feature name collides with an outcome or the id column",
                ));
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Result<&FeatureSpec> {
        self.feature_index(name)
            .map(|i| &self.features[i])
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| Error::UnknownOutcome(name.to_string()))
    }

    /// Indices of features flagged mutable (numerical labs).
    pub fn mutable_features(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.mutable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn features_with_tag(&self, tag: FeatureTag) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.has_tag(tag))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<CohortSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CohortSchema::from_toml_str(&text)
}
