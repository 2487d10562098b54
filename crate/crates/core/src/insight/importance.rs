//! Global feature importance, overall and per subgroup.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::explain::shap::shap_values_by_feature;
use crate::forest::Forest;
use crate::scalar::{to_f64, Scalar};
use crate::schema::CohortSchema;

/// Membership test for the first group of a pair; everything else falls in
/// the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupRule {
    /// Binary feature is set.
    Flag { feature: String },
    /// Categorical feature equals a level.
    Level { feature: String, level: String },
    /// Numerical feature is at most `value`; missing values fall outside.
    AtMost { feature: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPair {
    pub name: String,
    pub rule: GroupRule,
    pub in_label: String,
    pub out_label: String,
}

impl SubgroupPair {
    /// Sex, African American race, and age ≤ 65.
    pub fn defaults() -> Vec<SubgroupPair> {
        vec![
            SubgroupPair {
                name: "sex".into(),
                rule: GroupRule::Flag { feature: "sex".into() },
                in_label: "Male".into(),
                out_label: "Female".into(),
            },
            SubgroupPair {
                name: "race".into(),
                rule: GroupRule::Level {
                    feature: "race".into(),
                    level: "African American".into(),
                },
                in_label: "African American".into(),
                out_label: "Non-African American".into(),
            },
            SubgroupPair {
                name: "age".into(),
                rule: GroupRule::AtMost {
                    feature: "age".into(),
                    value: 65.0,
                },
                in_label: "Age ≤ 65".into(),
                out_label: "Age > 65".into(),
            },
        ]
    }

    /// `true` for the first group, per record, in dataset order.
    pub fn assign(&self, schema: &CohortSchema, records: &[PatientRecord]) -> Result<Vec<bool>> {
        let feature = match &self.rule {
            GroupRule::Flag { feature } | GroupRule::Level { feature, .. } | GroupRule::AtMost { feature, .. } => feature,
        };
        let i = schema
            .feature_index(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.clone()))?;
        let spec = &schema.features[i];
        let test: Box<dyn Fn(Value) -> bool> = match &self.rule {
            GroupRule::Flag { .. } if spec.is_binary() => Box::new(|v| v == Value::Binary(true)),
            GroupRule::Level { level, .. } => {
                let l = spec
                    .level_index(level)
                    .ok_or_else(|| Error::invalid(format!("grouping.{}", self.name), format!("unknown level {level:?}")))?;
                Box::new(move |v| v == Value::Level(l))
            }
            GroupRule::AtMost { value, .. } if spec.is_numerical() => {
                let t = *value;
                Box::new(move |v| matches!(v, Value::Number(x) if x <= t))
            }
            _ => {
                return Err(Error::invalid(
                    format!("grouping.{}", self.name),
                    format!("rule does not fit the kind of {feature}"),
                ))
            }
        };
        Ok(records.iter().map(|r| test(r.values[i])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    /// Mean |SHAP| per feature.
    #[default]
    MeanAbsShap,
    /// Mean absolute change in predicted risk when a feature's values are
    /// shuffled across the sample.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceConfig {
    pub method: ImportanceMethod,
    /// Records sampled per group (fewer when the group is smaller).
    pub sample_size: usize,
    pub seed: u64,
    /// Restricts to one outcome; otherwise averaged over outcomes.
    pub outcome: Option<String>,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            method: ImportanceMethod::MeanAbsShap,
            sample_size: 2000,
            seed: 0,
            outcome: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub display_name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub label: String,
    pub n_records: usize,
    pub n_sampled: usize,
    /// Every schema feature, by descending importance (schema order on ties).
    pub entries: Vec<FeatureImportance>,
}

impl Ranking {
    pub fn position(&self, feature: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.feature == feature)
    }

    pub fn importance(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.importance)
    }

    /// Importances in schema order.
    pub fn by_schema(&self, schema: &CohortSchema) -> Vec<f64> {
        schema
            .features
            .iter()
            .map(|f| self.importance(&f.name).unwrap_or(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub method: ImportanceMethod,
    pub outcome: Option<String>,
    pub overall: Ranking,
    pub grouping: Option<String>,
    /// Empty, or the two groups of `grouping`.
    pub groups: Vec<Ranking>,
}

fn sample_rows(rows: &[usize], n: usize, seed: u64, stream: u64) -> Vec<usize> {
    if rows.len() <= n {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), n).into_iter().map(|i| rows[i]).collect();
    picked.sort_unstable();
    picked
}

fn outcome_mean<T: Scalar>(values: &[T], outcome: Option<usize>, f: impl Fn(T) -> f64) -> f64 {
    match outcome {
        Some(k) => f(values[k]),
        None => values.iter().map(|&v| f(v)).sum::<f64>() / values.len() as f64,
    }
}

fn mean_abs_shap<T: Scalar>(model: &Forest<T>, dataset: &Dataset, rows: &[usize], outcome: Option<usize>) -> Result<Vec<f64>> {
    let per_record: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| {
            let (_, phi) = shap_values_by_feature(model, &dataset.records[i])?;
            Ok(phi
                .iter()
                .map(|p| outcome_mean(p, outcome, |v| to_f64(v).abs()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; model.schema.arity()];
    for r in &per_record {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|t| t / rows.len() as f64).collect())
}

fn permutation<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    rows: &[usize],
    outcome: Option<usize>,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let encoded: Vec<Vec<T>> = rows.iter().map(|&i| model.encode(&dataset.records[i])).collect();
    let base: Vec<Vec<T>> = encoded.iter().map(|r| model.predict_encoded(r)).collect();
    (0..model.schema.arity())
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5045_524d);
            rng.set_stream(stream * 1024 + j as u64);
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (a, &b) in order.iter().enumerate() {
                let mut row = encoded[a].clone();
                model
                    .encoder
                    .encode_value(j, dataset.records[rows[b]].values[j], model.imputation[j], &mut row);
                let p = model.predict_encoded(&row);
                let diff: Vec<T> = p.iter().zip(&base[a]).map(|(&x, &y)| x - y).collect();
                total += outcome_mean(&diff, outcome, |v| to_f64(v).abs());
            }
            total / rows.len() as f64
        })
        .collect()
}

fn ranking<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    label: &str,
    rows: &[usize],
    config: &ImportanceConfig,
    outcome: Option<usize>,
    stream: u64,
) -> Result<Ranking> {
    if rows.is_empty() {
        return Err(Error::EmptyGroup(label.to_string()));
    }
    let sampled = sample_rows(rows, config.sample_size, config.seed, stream);
    let values = match config.method {
        ImportanceMethod::MeanAbsShap => mean_abs_shap(model, dataset, &sampled, outcome)?,
        ImportanceMethod::Permutation => permutation(model, dataset, &sampled, outcome, config.seed, stream),
    };
    let mut entries: Vec<FeatureImportance> = model
        .schema
        .features
        .iter()
        .zip(values)
        .map(|(f, importance)| FeatureImportance {
            feature: f.name.clone(),
            display_name: f.display_name.clone(),
            importance,
        })
        .collect();
    entries.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    Ok(Ranking {
        label: label.to_string(),
        n_records: rows.len(),
        n_sampled: sampled.len(),
        entries,
    })
}

pub fn global_importance<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    grouping: Option<&SubgroupPair>,
    config: &ImportanceConfig,
) -> Result<GlobalImportance> {
    let outcome = prepare(model, dataset, config)?;
    let overall = overall_ranking(model, dataset, config, outcome)?;
    let groups = match grouping {
        None => Vec::new(),
        Some(pair) => subgroup_rankings(model, dataset, pair, config, outcome)?,
    };
    Ok(GlobalImportance {
        method: config.method,
        outcome: config.outcome.clone(),
        overall,
        grouping: grouping.map(|g| g.name.clone()),
        groups,
    })
}

/// Rankings of the two groups of a pair, with streams distinct from the
/// overall sample.
pub(crate) fn subgroup_rankings<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    pair: &SubgroupPair,
    config: &ImportanceConfig,
    outcome: Option<usize>,
) -> Result<Vec<Ranking>> {
    let member = pair.assign(&model.schema, &dataset.records)?;
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| member[i]);
    Ok(vec![
        ranking(model, dataset, &pair.in_label, &inside, config, outcome, 1)?,
        ranking(model, dataset, &pair.out_label, &outside, config, outcome, 2)?,
    ])
}

pub(crate) fn overall_ranking<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    config: &ImportanceConfig,
    outcome: Option<usize>,
) -> Result<Ranking> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    ranking(model, dataset, "Overall", &all, config, outcome, 0)
}

/// Shared preconditions; returns the selected outcome index.
pub(crate) fn prepare<T: Scalar>(model: &Forest<T>, dataset: &Dataset, config: &ImportanceConfig) -> Result<Option<usize>> {
    model.check_dataset(dataset)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.sample_size == 0 {
        return Err(Error::invalid("sample_size", "must be at least 1"));
    }
    config
        .outcome
        .as_deref()
        .map(|o| model.schema.outcome_index(o))
        .transpose()
}
