//! Model card assembly.

use serde::{Deserialize, Serialize};

use super::importance::{overall_ranking, prepare, subgroup_rankings, ImportanceConfig, ImportanceMethod, Ranking, SubgroupPair};
use crate::data::{Dataset, Value};
use crate::error::{Error, Result};
use crate::forest::{evaluate_auroc, Forest, OutcomeAuroc};
use crate::scalar::Scalar;

pub type OutcomePerformance = OutcomeAuroc;

const DEMO_TEMPLATE: &str = include_str!("../../assets/demo_card.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CardText {
    title: String,
    overview: String,
    data_source: String,
    references: Vec<String>,
    intended_users: Vec<String>,
    use_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CardConfig {
    pub title: String,
    pub overview: String,
    pub data_source: String,
    pub references: Vec<String>,
    pub intended_users: Vec<String>,
    pub use_cases: Vec<String>,
    pub subgroups: Vec<SubgroupPair>,
    pub importance: ImportanceConfig,
    pub age_feature: Option<String>,
    /// Binary feature whose set value means male.
    pub sex_feature: Option<String>,
    /// Fixed timestamp; the current UTC time when absent.
    pub generated_at: Option<String>,
}

impl Default for CardConfig {
    fn default() -> Self {
        CardConfig::demo()
    }
}

impl CardConfig {
    /// Bundled demo text with the default subgroup pairs.
    pub fn demo() -> Self {
        let t: CardText = toml::from_str(DEMO_TEMPLATE).expect("bundled card template parses");
        CardConfig {
            title: t.title,
            overview: t.overview.trim().to_string(),
            data_source: t.data_source.trim().to_string(),
            references: t.references,
            intended_users: t.intended_users,
            use_cases: t.use_cases,
            subgroups: SubgroupPair::defaults(),
            importance: ImportanceConfig::default(),
            age_feature: Some("age".into()),
            sex_feature: Some("sex".into()),
            generated_at: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("card config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SexCounts {
    pub male: usize,
    pub female: usize,
    pub male_pct: f64,
    pub female_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortColumn {
    pub label: String,
    pub n_patients: usize,
    pub n_encounters: usize,
    pub age_mean: Option<f64>,
    pub age_sd: Option<f64>,
    pub sex: Option<SexCounts>,
    /// Observed rate per outcome, aligned with `ModelCard::outcomes`.
    pub prevalence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupImportance {
    pub name: String,
    pub groups: Vec<Ranking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardImportance {
    pub method: ImportanceMethod,
    pub outcome: Option<String>,
    pub overall: Ranking,
    pub subgroups: Vec<SubgroupImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_fingerprint: String,
    pub development_fingerprint: String,
    pub validation_fingerprint: String,
    pub generated_at: String,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub title: String,
    pub overview: String,
    pub data_source: String,
    pub references: Vec<String>,
    pub intended_users: Vec<String>,
    pub use_cases: Vec<String>,
    pub outcomes: Vec<String>,
    /// Development then validation.
    pub cohort: Vec<CohortColumn>,
    /// Measured on the validation set.
    pub performance: Vec<OutcomePerformance>,
    /// Measured on the validation set.
    pub importance: CardImportance,
    pub provenance: Provenance,
}

impl ModelCard {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("card serializes")
    }
}

fn cohort_column(dataset: &Dataset, label: &str, config: &CardConfig) -> Result<CohortColumn> {
    let schema = &dataset.schema;
    let labels = dataset.labels.as_ref().ok_or(Error::Unlabeled)?;
    let n = dataset.len();
    let mut ids: Vec<&str> = dataset.records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();

    let (age_mean, age_sd) = match &config.age_feature {
        Some(f) => {
            let i = schema.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone()))?;
            let ages = dataset.numeric_column(i);
            if ages.is_empty() {
                (None, None)
            } else {
                let m = ages.iter().sum::<f64>() / ages.len() as f64;
                let var = if ages.len() > 1 {
                    ages.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (ages.len() - 1) as f64
                } else {
                    0.0
                };
                (Some(m), Some(var.sqrt()))
            }
        }
        None => (None, None),
    };
    let sex = match &config.sex_feature {
        Some(f) => {
            let i = schema.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone()))?;
            if !schema.features[i].is_binary() {
                return Err(Error::invalid("card.sex_feature", "must be binary"));
            }
            let male = dataset
                .records
                .iter()
                .filter(|r| r.values[i] == Value::Binary(true))
                .count();
            let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
            Some(SexCounts {
                male,
                female: n - male,
                male_pct: pct(male),
                female_pct: pct(n - male),
            })
        }
        None => None,
    };
    let prevalence = (0..schema.outcomes.len())
        .map(|k| labels.iter().filter(|l| l[k]).count() as f64 / n as f64)
        .collect();
    Ok(CohortColumn {
        label: label.to_string(),
        n_patients: ids.len(),
        n_encounters: n,
        age_mean,
        age_sd,
        sex,
        prevalence,
    })
}

/// Assembles a card: cohort statistics from both splits, performance and
/// importance on the validation split.
pub fn build_model_card<T: Scalar>(model: &Forest<T>, dev: &Dataset, val: &Dataset, config: &CardConfig) -> Result<ModelCard> {
    for d in [dev, val] {
        model.check_dataset(d)?;
        if !d.is_labeled() {
            return Err(Error::Unlabeled);
        }
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
    }
    let cohort = vec![
        cohort_column(dev, "Development", config)?,
        cohort_column(val, "Validation", config)?,
    ];
    let performance = evaluate_auroc(model, val)?;
    let outcome = prepare(model, val, &config.importance)?;
    let overall = overall_ranking(model, val, &config.importance, outcome)?;
    let subgroups = config
        .subgroups
        .iter()
        .map(|pair| {
            Ok(SubgroupImportance {
                name: pair.name.clone(),
                groups: subgroup_rankings(model, val, pair, &config.importance, outcome)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let generated_at = config
        .generated_at
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    Ok(ModelCard {
        title: config.title.clone(),
        overview: config.overview.clone(),
        data_source: config.data_source.clone(),
        references: config.references.clone(),
        intended_users: config.intended_users.clone(),
        use_cases: config.use_cases.clone(),
        outcomes: model.schema.outcomes.clone(),
        cohort,
        performance,
        importance: CardImportance {
            method: config.importance.method,
            outcome: config.importance.outcome.clone(),
            overall,
            subgroups,
        },
        provenance: Provenance {
            model_fingerprint: model.fingerprint(),
            development_fingerprint: dev.fingerprint(),
            validation_fingerprint: val.fingerprint(),
            generated_at,
            generator: concat!("riskxai ", env!("CARGO_PKG_VERSION")).to_string(),
        },
    })
}
