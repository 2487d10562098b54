//! Cohort-level answers: similar patients, global importance, model cards.

mod card;
mod importance;
mod render;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::forest::{Forest, RiskPrediction};
use crate::scalar::{from_usize, Scalar};
use crate::schema::{CohortSchema, FeatureTag};

pub use card::{
    build_model_card, CardConfig, CardImportance, CohortColumn, ModelCard, OutcomePerformance, Provenance, SexCounts,
    SubgroupImportance,
};
pub use importance::{
    global_importance, FeatureImportance, GlobalImportance, GroupRule, ImportanceConfig, ImportanceMethod, Ranking,
    SubgroupPair,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityCriteria {
    pub age_feature: String,
    pub age_tolerance: f64,
    pub exact_match: Vec<String>,
    /// Minimum fraction of comorbidity flags with equal values.
    pub comorbidity_threshold: f64,
}

impl Default for SimilarityCriteria {
    fn default() -> Self {
        SimilarityCriteria {
            age_feature: "age".into(),
            age_tolerance: 5.0,
            exact_match: vec!["race".into(), "sex".into(), "surgery_type".into()],
            comorbidity_threshold: 0.6,
        }
    }
}

/// Criteria resolved against a schema.
struct Resolved {
    age: usize,
    exact: Vec<usize>,
    comorbidities: Vec<usize>,
}

impl SimilarityCriteria {
    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        self.resolve(schema).map(|_| ())
    }

    fn resolve(&self, schema: &CohortSchema) -> Result<Resolved> {
        if !(self.age_tolerance >= 0.0 && self.age_tolerance.is_finite()) {
            return Err(Error::invalid("criteria.age_tolerance", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.comorbidity_threshold) {
            return Err(Error::invalid("criteria.comorbidity_threshold", "must lie in [0, 1]"));
        }
        let age = schema
            .feature_index(&self.age_feature)
            .ok_or_else(|| Error::UnknownFeature(self.age_feature.clone()))?;
        if !schema.features[age].is_numerical() {
            return Err(Error::invalid("criteria.age_feature", "must be numerical"));
        }
        let exact = self
            .exact_match
            .iter()
            .map(|f| schema.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone())))
            .collect::<Result<Vec<_>>>()?;
        let comorbidities = schema
            .features_with_tag(FeatureTag::Comorbidity)
            .into_iter()
            .filter(|&i| schema.features[i].is_binary())
            .collect();
        Ok(Resolved {
            age,
            exact,
            comorbidities,
        })
    }
}

/// Fraction of the given flags on which two records agree (presence and
/// absence both count). 1 when there are no flags.
pub fn comorbidity_agreement(a: &PatientRecord, b: &PatientRecord, flags: &[usize]) -> f64 {
    if flags.is_empty() {
        return 1.0;
    }
    let equal = flags.iter().filter(|&&i| a.values[i] == b.values[i]).count();
    equal as f64 / flags.len() as f64
}

fn is_match(r: &Resolved, criteria: &SimilarityCriteria, index: &PatientRecord, other: &PatientRecord) -> bool {
    if other.id == index.id {
        return false;
    }
    let age_ok = match (index.values[r.age], other.values[r.age]) {
        (Value::Number(a), Value::Number(b)) => (a - b).abs() <= criteria.age_tolerance,
        _ => false,
    };
    age_ok
        && r.exact.iter().all(|&i| index.values[i] == other.values[i])
        && comorbidity_agreement(index, other, &r.comorbidities) >= criteria.comorbidity_threshold
}

/// Row indices of records similar to `index`, in dataset order. The index
/// patient's own id never matches.
pub fn find_similar(dataset: &Dataset, index: &PatientRecord, criteria: &SimilarityCriteria) -> Result<Vec<usize>> {
    let r = criteria.resolve(&dataset.schema)?;
    index.validate(&dataset.schema)?;
    Ok(dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, other)| is_match(&r, criteria, index, other))
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CohortSummary<T: Scalar> {
    pub matched: usize,
    pub matched_ids: Vec<String>,
    pub outcomes: Vec<String>,
    /// Per-outcome mean predicted risk; absent when nothing matched.
    pub mean_predicted_risk: Option<Vec<T>>,
    /// Per-outcome observed rate; absent when nothing matched or the
    /// dataset is unlabeled.
    pub observed_prevalence: Option<Vec<f64>>,
    pub index_risk: RiskPrediction<T>,
    pub criteria: SimilarityCriteria,
}

pub fn cohort_summary<T: Scalar>(
    model: &Forest<T>,
    dataset: &Dataset,
    index: &PatientRecord,
    criteria: &SimilarityCriteria,
) -> Result<CohortSummary<T>> {
    model.check_dataset(dataset)?;
    let rows = find_similar(dataset, index, criteria)?;
    let index_risk = model.predict_proba(index)?;
    let k = model.n_outcomes();
    let (mean_predicted_risk, observed_prevalence) = if rows.is_empty() {
        (None, None)
    } else {
        let mut sums = vec![T::zero(); k];
        for &i in &rows {
            let p = model.predict_encoded(&model.encode(&dataset.records[i]));
            for (s, v) in sums.iter_mut().zip(p) {
                *s = *s + v;
            }
        }
        let n = from_usize::<T>(rows.len());
        let means = sums.into_iter().map(|s| s / n).collect();
        let prevalence = dataset.labels.as_ref().map(|labels| {
            (0..k)
                .map(|o| rows.iter().filter(|&&i| labels[i][o]).count() as f64 / rows.len() as f64)
                .collect()
        });
        (Some(means), prevalence)
    };
    Ok(CohortSummary {
        matched: rows.len(),
        matched_ids: rows.iter().map(|&i| dataset.records[i].id.clone()).collect(),
        outcomes: model.schema.outcomes.clone(),
        mean_predicted_risk,
        observed_prevalence,
        index_risk,
        criteria: criteria.clone(),
    })
}
