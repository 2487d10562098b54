//! Seeded synthetic cohorts with a known logistic ground truth per outcome.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::schema::{CohortSchema, FeatureKind, FeatureSpec};

const DEFAULT_GENERATOR: &str = include_str!("../assets/default_generator.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    Bernoulli { p: f64 },
    /// Weights over the declared levels; uniform when omitted.
    Categorical {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    TruncatedNormal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMarginal {
    #[serde(flatten)]
    pub dist: Marginal,
    /// Probability that a lab value is recorded as missing.
    #[serde(default)]
    pub missing_rate: f64,
}

/// One additive term of a logistic risk function.
///
/// Binary features contribute `coefficient * x`; categorical features
/// contribute `coefficient * [x == level]`; numerical features contribute
/// `coefficient * (x - center) / scale`. Missing labs contribute zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub feature: String,
    pub coefficient: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRisk {
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<RiskTerm>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Per-feature marginals; features without an entry get a default
    /// (Bernoulli 0.5, uniform levels, or a normal centred in the range).
    #[serde(default)]
    pub marginals: BTreeMap<String, FeatureMarginal>,
    /// Ground-truth risk function per outcome; every schema outcome needs one.
    pub outcomes: BTreeMap<String, OutcomeRisk>,
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("generator config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Generator matching [`CohortSchema::default_surgical`].
    pub fn default_surgical() -> Self {
        Self::from_toml_str(DEFAULT_GENERATOR).expect("bundled generator is valid")
    }

    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        for (name, m) in &self.marginals {
            let spec = schema
                .feature(name)
                .map_err(|_| Error::Config(format!("marginal for undeclared feature `{name}`")))?;
            let ok = match (&m.dist, &spec.kind) {
                (Marginal::Bernoulli { p }, FeatureKind::Binary) => (0.0..=1.0).contains(p),
                (Marginal::Categorical { weights }, FeatureKind::Categorical { levels }) => {
                    weights.as_ref().is_none_or(|w| {
                        w.len() == levels.len()
                            && w.iter().all(|x| *x >= 0.0 && x.is_finite())
                            && w.iter().sum::<f64>() > 0.0
                    })
                }
                (Marginal::TruncatedNormal { sd, mean }, FeatureKind::Numerical { .. }) => {
                    *sd > 0.0 && mean.is_finite()
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!("marginal for `{name}` does not fit its feature")));
            }
            if m.missing_rate != 0.0 && !(spec.allows_missing() && (0.0..1.0).contains(&m.missing_rate)) {
                return Err(Error::Config(format!(
                    "`{name}` cannot have missing_rate {}",
                    m.missing_rate
                )));
            }
        }
        for outcome in &schema.outcomes {
            if !self.outcomes.contains_key(outcome) {
                return Err(Error::Config(format!("no risk function for outcome `{outcome}`")));
            }
        }
        for (outcome, risk) in &self.outcomes {
            schema.outcome_index(outcome)?;
            for t in &risk.terms {
                let spec = schema.feature(&t.feature).map_err(|_| {
                    Error::Config(format!(
                        "coefficient for outcome `{outcome}` references undeclared feature `{}`",
                        t.feature
                    ))
                })?;
                if spec.levels().is_some() {
                    let lvl = t.level.as_deref().unwrap_or_default();
                    if spec.level_index(lvl).is_none() {
                        return Err(Error::Config(format!(
                            "term on `{}` needs a declared level (got `{lvl}`)",
                            t.feature
                        )));
                    }
                }
                if t.scale == 0.0 || !t.scale.is_finite() {
                    return Err(Error::Config(format!("term on `{}` has zero scale", t.feature)));
                }
            }
        }
        Ok(())
    }

    /// The effective marginal for a feature, including defaults.
    pub fn marginal(&self, spec: &FeatureSpec) -> FeatureMarginal {
        if let Some(m) = self.marginals.get(&spec.name) {
            return m.clone();
        }
        let dist = match &spec.kind {
            FeatureKind::Binary => Marginal::Bernoulli { p: 0.5 },
            FeatureKind::Categorical { .. } => Marginal::Categorical { weights: None },
            FeatureKind::Numerical { min, max, .. } => Marginal::TruncatedNormal {
                mean: (min + max) / 2.0,
                sd: (max - min) / 6.0,
            },
        };
        FeatureMarginal {
            dist,
            missing_rate: 0.0,
        }
    }

    /// Ground-truth logit for one outcome.
    pub fn logit(&self, schema: &CohortSchema, record: &PatientRecord, outcome: &str) -> Result<f64> {
        let risk = self
            .outcomes
            .get(outcome)
            .ok_or_else(|| Error::UnknownOutcome(outcome.into()))?;
        let mut z = risk.intercept;
        for t in &risk.terms {
            let idx = schema
                .feature_index(&t.feature)
                .ok_or_else(|| Error::UnknownFeature(t.feature.clone()))?;
            let spec = &schema.features[idx];
            let x = match record.values[idx] {
                Value::Binary(b) => f64::from(u8::from(b)),
                Value::Level(i) => {
                    let want = t.level.as_deref().and_then(|l| spec.level_index(l));
                    f64::from(u8::from(want == Some(i)))
                }
                Value::Number(x) => (x - t.center) / t.scale,
                Value::Missing => 0.0,
            };
            z += t.coefficient * x;
        }
        Ok(z)
    }

    /// Ground-truth risk `σ(logit)` for one outcome.
    pub fn risk(&self, schema: &CohortSchema, record: &PatientRecord, outcome: &str) -> Result<f64> {
        Ok(sigmoid(self.logit(schema, record, outcome)?))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// A generated dataset together with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub dataset: Dataset,
    pub config: GeneratorConfig,
    pub seed: u64,
}

impl SyntheticCohort {
    pub fn ground_truth_risk(&self, record: &PatientRecord, outcome: &str) -> Result<f64> {
        self.config.risk(&self.dataset.schema, record, outcome)
    }
}

fn sample_value(spec: &FeatureSpec, m: &FeatureMarginal, rng: &mut ChaCha8Rng) -> Value {
    if m.missing_rate > 0.0 && rng.random::<f64>() < m.missing_rate {
        return Value::Missing;
    }
    match (&m.dist, &spec.kind) {
        (Marginal::Bernoulli { p }, _) => Value::Binary(rng.random::<f64>() < *p),
        (Marginal::Categorical { weights }, FeatureKind::Categorical { levels }) => {
            let k = levels.len();
            let i = match weights {
                None => rng.random_range(0..k),
                Some(w) => {
                    let total: f64 = w.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = k - 1;
                    for (i, wi) in w.iter().enumerate() {
                        if u < *wi {
                            pick = i;
                            break;
                        }
                        u -= wi;
                    }
                    pick
                }
            };
            Value::Level(i)
        }
        (Marginal::TruncatedNormal { mean, sd }, FeatureKind::Numerical { min, max, .. }) => {
            let normal = Normal::new(*mean, *sd).expect("validated sd > 0");
            let mut x = None;
            for _ in 0..1000 {
                let v = normal.sample(rng);
                if v >= *min && v <= *max {
                    x = Some(v);
                    break;
                }
            }
            // Only reachable when the mass inside [min, max] is negligible.
            let x = x.unwrap_or_else(|| rng.random_range(*min..=*max));
            let x = spec.round_to_precision(x).clamp(*min, *max);
            Value::Number(x)
        }
        _ => unreachable!("marginal/kind pairing validated"),
    }
}

/// Samples `n` labeled records. Pure function of `(schema, config, seed, n)`.
pub fn generate_synthetic_cohort(
    schema: Arc<CohortSchema>,
    config: &GeneratorConfig,
    seed: u64,
    n: usize,
) -> Result<SyntheticCohort> {
    if n == 0 {
        return Err(Error::Config("cohort size must be at least 1".into()));
    }
    config.validate(&schema)?;
    let marginals: Vec<FeatureMarginal> = schema.features.iter().map(|f| config.marginal(f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(5);
    let mut records = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let values = schema
            .features
            .iter()
            .zip(&marginals)
            .map(|(spec, m)| sample_value(spec, m, &mut rng))
            .collect();
        let record = PatientRecord {
            id: format!("p{:0width$}", i + 1),
            values,
        };
        let mut row = Vec::with_capacity(schema.outcomes.len());
        for outcome in &schema.outcomes {
            let p = config.risk(&schema, &record, outcome)?;
            row.push(rng.random::<f64>() < p);
        }
        records.push(record);
        labels.push(row);
    }
    let dataset = Dataset::new(schema, records, Some(labels))?;
    Ok(SyntheticCohort {
        dataset,
        config: config.clone(),
        seed,
    })
}
