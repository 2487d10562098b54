//! Random-forest classifier with vector (per-outcome) leaves.

mod persist;
mod tree;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Scalar};
use crate::schema::{CohortSchema, FeatureKind};
use crate::stats::{self, RocPoint};

pub use persist::{load_model, save_model, FORMAT_VERSION};
pub use tree::{DecisionTree, Node};
use tree::{GrowParams, TrainingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of encoded columns tried per split; `None` means √columns.
    #[serde(default)]
    pub features_per_split_fraction: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 300,
            max_depth: 16,
            min_leaf: 5,
            features_per_split_fraction: None,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if let Some(f) = self.features_per_split_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "features_per_split_fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    fn features_per_split(&self, n_columns: usize) -> usize {
        let k = match self.features_per_split_fraction {
            Some(f) => (f * n_columns as f64).round() as usize,
            None => (n_columns as f64).sqrt().round() as usize,
        };
        k.clamp(1, n_columns.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Encoded columns owned by one schema feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub feature: usize,
    pub start: usize,
    pub len: usize,
}

/// Schema feature → encoded columns. Binary and numerical features take one
/// column; categorical features a one-hot group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub groups: Vec<ColumnGroup>,
    pub n_columns: usize,
}

impl Encoder {
    pub fn new(schema: &CohortSchema) -> Self {
        let mut start = 0;
        let groups = schema
            .features
            .iter()
            .enumerate()
            .map(|(feature, f)| {
                let len = match &f.kind {
                    FeatureKind::Categorical { levels } => levels.len(),
                    _ => 1,
                };
                let g = ColumnGroup { feature, start, len };
                start += len;
                g
            })
            .collect();
        Encoder {
            groups,
            n_columns: start,
        }
    }

    /// Schema feature owning each encoded column.
    pub fn column_features(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_columns];
        for g in &self.groups {
            out[g.start..g.start + g.len].fill(g.feature);
        }
        out
    }

    /// Writes one feature's encoding into `row`. Missing values take the
    /// imputation value.
    pub fn encode_value<T: Scalar>(&self, feature: usize, value: Value, impute: Option<f64>, row: &mut [T]) {
        let g = &self.groups[feature];
        match value {
            Value::Binary(b) => row[g.start] = if b { T::one() } else { T::zero() },
            Value::Level(i) => {
                for j in 0..g.len {
                    row[g.start + j] = if j == i { T::one() } else { T::zero() };
                }
            }
            Value::Number(x) => row[g.start] = lit(x),
            Value::Missing => row[g.start] = lit(impute.unwrap_or(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub n_records: usize,
    pub dataset_fingerprint: String,
    pub scalar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RiskPrediction<T: Scalar> {
    pub outcomes: Vec<String>,
    pub probabilities: Vec<T>,
}

impl<T: Scalar> RiskPrediction<T> {
    pub fn get(&self, outcome: &str) -> Option<T> {
        self.outcomes
            .iter()
            .position(|o| o == outcome)
            .map(|i| self.probabilities[i])
    }
}

/// A trained forest. Immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Forest<T: Scalar> {
    pub schema: Arc<CohortSchema>,
    pub encoder: Encoder,
    /// Training median per feature, set for numerical lab features only.
    pub imputation: Vec<Option<f64>>,
    pub trees: Vec<DecisionTree<T>>,
    /// Mean training-set prediction per outcome.
    pub base_rates: Vec<T>,
    pub metadata: TrainingMetadata,
}

fn check_trainable(dataset: &Dataset) -> Result<&[Vec<bool>]> {
    let labels = dataset.labels.as_deref().ok_or(Error::Unlabeled)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (k, name) in dataset.schema.outcomes.iter().enumerate() {
        let pos = labels.iter().filter(|l| l[k]).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::SingleClassOutcome(name.clone()));
        }
    }
    Ok(labels)
}

/// Trains with tree-level parallelism. Equivalent to
/// [`train_forest_with`] under [`Execution::Parallel`].
pub fn train_forest<T: Scalar>(dataset: &Dataset, hyperparams: &Hyperparams, seed: u64) -> Result<Forest<T>> {
    train_forest_with(dataset, hyperparams, seed, Execution::Parallel)
}

/// Bootstrap-sampled Gini trees. Tree `i` draws from its own ChaCha stream
/// `(seed, i)`, so the result does not depend on `execution`.
pub fn train_forest_with<T: Scalar>(
    dataset: &Dataset,
    hyperparams: &Hyperparams,
    seed: u64,
    execution: Execution,
) -> Result<Forest<T>> {
    hyperparams.validate()?;
    let labels = check_trainable(dataset)?;
    let schema = dataset.schema.clone();
    let encoder = Encoder::new(&schema);

    let imputation: Vec<Option<f64>> = schema
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.allows_missing().then(|| {
                let (min, max) = f.range().expect("numerical");
                stats::median(&dataset.numeric_column(i)).unwrap_or((min + max) / 2.0)
            })
        })
        .collect();

    let mut columns = vec![Vec::with_capacity(dataset.len()); encoder.n_columns];
    let mut row = vec![T::zero(); encoder.n_columns];
    for r in &dataset.records {
        encode_into(&encoder, &imputation, r, &mut row);
        for (c, v) in row.iter().enumerate() {
            columns[c].push(*v);
        }
    }
    let matrix = TrainingMatrix {
        columns: &columns,
        labels,
        n_outcomes: schema.outcomes.len(),
    };
    let params = GrowParams {
        max_depth: hyperparams.max_depth,
        min_leaf: hyperparams.min_leaf,
        features_per_split: hyperparams.features_per_split(encoder.n_columns),
    };
    let n = dataset.len();
    let build = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let samples: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        tree::grow(&matrix, samples, &params, &mut rng)
    };
    let trees: Vec<DecisionTree<T>> = match execution {
        Execution::Serial => (0..hyperparams.n_trees).map(build).collect(),
        Execution::Parallel => (0..hyperparams.n_trees).into_par_iter().map(build).collect(),
    };

    let mut forest = Forest {
        schema: schema.clone(),
        encoder,
        imputation,
        trees,
        base_rates: Vec::new(),
        metadata: TrainingMetadata {
            hyperparams: hyperparams.clone(),
            seed,
            n_records: n,
            dataset_fingerprint: dataset.fingerprint(),
            scalar: scalar_name::<T>().into(),
        },
    };
    let mut sums = vec![T::zero(); schema.outcomes.len()];
    for r in 0..n {
        let x: Vec<T> = columns.iter().map(|c| c[r]).collect();
        for (s, p) in sums.iter_mut().zip(forest.predict_encoded(&x)) {
            *s = *s + p;
        }
    }
    forest.base_rates = sums.into_iter().map(|s| s / from_usize(n)).collect();
    Ok(forest)
}

pub(crate) fn scalar_name<T: Scalar>() -> &'static str {
    std::any::type_name::<T>()
}

fn encode_into<T: Scalar>(encoder: &Encoder, imputation: &[Option<f64>], record: &PatientRecord, row: &mut [T]) {
    for (f, v) in record.values.iter().enumerate() {
        encoder.encode_value(f, *v, imputation[f], row);
    }
}

impl<T: Scalar> Forest<T> {
    /// Forest over explicit trees, used to build oracle models in tests and
    /// demos. Base rates are the cover-weighted expectations of each tree.
    pub fn from_trees(schema: Arc<CohortSchema>, trees: Vec<DecisionTree<T>>) -> Result<Self> {
        let encoder = Encoder::new(&schema);
        if trees.is_empty() {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        for (i, t) in trees.iter().enumerate() {
            t.check(encoder.n_columns, schema.outcomes.len())
                .map_err(|e| Error::Config(format!("tree {i}: {e}")))?;
        }
        let imputation = schema
            .features
            .iter()
            .map(|f| {
                f.allows_missing().then(|| {
                    let (min, max) = f.range().expect("numerical");
                    (min + max) / 2.0
                })
            })
            .collect();
        let k = schema.outcomes.len();
        let mut base_rates = vec![T::zero(); k];
        for t in &trees {
            for (b, e) in base_rates.iter_mut().zip(crate::explain::shap::expected_values(t, k)) {
                *b = *b + e;
            }
        }
        let nt = from_usize::<T>(trees.len());
        base_rates.iter_mut().for_each(|b| *b = *b / nt);
        Ok(Forest {
            schema,
            encoder,
            imputation,
            trees,
            base_rates,
            metadata: TrainingMetadata {
                hyperparams: Hyperparams::default(),
                seed: 0,
                n_records: 0,
                dataset_fingerprint: String::new(),
                scalar: scalar_name::<T>().into(),
            },
        })
    }

    /// Single-leaf forest predicting `p` for every outcome.
    pub fn constant(schema: Arc<CohortSchema>, p: T) -> Result<Self> {
        let k = schema.outcomes.len();
        Self::from_trees(schema, vec![DecisionTree::leaf(vec![p; k], 2)])
    }

    /// One tree splitting a numerical feature at `threshold`: `below` for
    /// `x <= threshold`, `above` otherwise, for every outcome.
    pub fn single_split(schema: Arc<CohortSchema>, feature: &str, threshold: f64, below: T, above: T) -> Result<Self> {
        let spec = schema.feature(feature)?;
        if !spec.is_numerical() {
            return Err(Error::invalid(feature, "single_split needs a numerical feature"));
        }
        let column = Encoder::new(&schema).groups[schema.feature_index(feature).expect("checked")].start;
        let k = schema.outcomes.len();
        let tree = DecisionTree {
            nodes: vec![
                Node::Split {
                    column,
                    threshold: lit(threshold),
                    left: 1,
                    right: 2,
                    cover: 2,
                },
                Node::Leaf {
                    values: vec![below; k],
                    cover: 1,
                },
                Node::Leaf {
                    values: vec![above; k],
                    cover: 1,
                },
            ],
        };
        Self::from_trees(schema, vec![tree])
    }

    pub fn n_outcomes(&self) -> usize {
        self.schema.outcomes.len()
    }

    pub fn check_record(&self, record: &PatientRecord) -> Result<()> {
        record.validate(&self.schema)
    }

    /// Encoded row for a conforming record; missing labs take the stored
    /// training medians.
    pub fn encode(&self, record: &PatientRecord) -> Vec<T> {
        let mut row = vec![T::zero(); self.encoder.n_columns];
        encode_into(&self.encoder, &self.imputation, record, &mut row);
        row
    }

    /// Value the model actually sees for a feature (imputed if missing).
    pub fn effective_number(&self, record: &PatientRecord, feature: usize) -> Option<f64> {
        match record.values[feature] {
            Value::Number(x) => Some(x),
            Value::Missing => self.imputation[feature],
            _ => None,
        }
    }

    /// Mean of the trees' leaf vectors for an encoded row.
    pub fn predict_encoded(&self, row: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.n_outcomes()];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_values(row)) {
                *a = *a + *v;
            }
        }
        let n = from_usize::<T>(self.trees.len());
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn predict_outcome_encoded(&self, row: &[T], outcome: usize) -> T {
        let s: T = self.trees.iter().map(|t| t.leaf_values(row)[outcome]).sum();
        s / from_usize(self.trees.len())
    }

    pub fn predict_proba(&self, record: &PatientRecord) -> Result<RiskPrediction<T>> {
        self.check_record(record)?;
        Ok(RiskPrediction {
            outcomes: self.schema.outcomes.clone(),
            probabilities: self.predict_encoded(&self.encode(record)),
        })
    }

    /// Predicted probabilities for every record (rows in dataset order).
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<Vec<T>>> {
        self.check_dataset(dataset)?;
        Ok(dataset
            .records
            .par_iter()
            .map(|r| self.predict_encoded(&self.encode(r)))
            .collect())
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if *dataset.schema != *self.schema {
            return Err(Error::SchemaMismatch("dataset schema differs from the model schema".into()));
        }
        Ok(())
    }

    /// Encoded columns used by at least one split.
    pub fn used_columns(&self) -> Vec<bool> {
        let mut used = vec![false; self.encoder.n_columns];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { column, .. } = n {
                    used[*column] = true;
                }
            }
        }
        used
    }

    /// SHA-256 of the serialized model, first 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let payload = serde_json::to_vec(self).expect("model serializes");
        hex::encode(&Sha256::digest(&payload)[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeAuroc {
    pub outcome: String,
    /// `None` when the outcome has a single class in the evaluation set.
    pub auroc: Option<f64>,
    pub roc: Option<Vec<RocPoint>>,
    pub positives: usize,
    pub negatives: usize,
}

/// Per-outcome Mann–Whitney AUROC and ROC polyline.
pub fn evaluate_auroc<T: Scalar>(model: &Forest<T>, dataset: &Dataset) -> Result<Vec<OutcomeAuroc>> {
    if !dataset.is_labeled() {
        return Err(Error::Unlabeled);
    }
    let preds = model.predict_dataset(dataset)?;
    Ok(model
        .schema
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let labels = dataset.outcome_labels(k).expect("labeled");
            let scores: Vec<T> = preds.iter().map(|p| p[k]).collect();
            let positives = labels.iter().filter(|&&l| l).count();
            OutcomeAuroc {
                outcome: name.clone(),
                auroc: stats::auroc(&scores, &labels),
                roc: stats::roc_curve(&scores, &labels),
                positives,
                negatives: labels.len() - positives,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FeatureSpec, FeatureTag};
    use std::collections::BTreeSet;

    pub(crate) fn glucose_schema() -> Arc<CohortSchema> {
        Arc::new(
            CohortSchema::new(
                vec![
                    FeatureSpec {
                        name: "glucose".into(),
                        display_name: "Serum Glucose".into(),
                        kind: FeatureKind::Numerical {
                            min: 40.0,
                            max: 600.0,
                            unit: "mg/dL".into(),
                        },
                        mutable: true,
                        tags: BTreeSet::from([FeatureTag::Lab]),
                        normal_range: Some((70.0, 140.0)),
                        precision: Some(0),
                    },
                    FeatureSpec {
                        name: "race".into(),
                        display_name: "Race".into(),
                        kind: FeatureKind::Categorical {
                            levels: vec!["A".into(), "B".into(), "C".into()],
                        },
                        mutable: false,
                        tags: BTreeSet::from([FeatureTag::Demographic]),
                        normal_range: None,
                        precision: None,
                    },
                ],
                vec!["mv".into(), "aki".into()],
            )
            .unwrap(),
        )
    }

    fn record(glucose: Value, race: usize) -> PatientRecord {
        PatientRecord {
            id: "r".into(),
            values: vec![glucose, Value::Level(race)],
        }
    }

    #[test]
    fn encoder_one_hot_groups() {
        let s = glucose_schema();
        let e = Encoder::new(&s);
        assert_eq!(e.n_columns, 4);
        assert_eq!(e.column_features(), vec![0, 1, 1, 1]);
    }

    #[test]
    fn single_leaf_forest_predicts_leaf_value() {
        let f: Forest<f64> = Forest::from_trees(glucose_schema(), vec![DecisionTree::leaf(vec![0.3, 0.6], 10)]).unwrap();
        let p = f.predict_proba(&record(Value::Number(100.0), 0)).unwrap();
        assert_eq!(p.probabilities, vec![0.3, 0.6]);
        assert_eq!(p.get("aki"), Some(0.6));
    }

    #[test]
    fn forest_prediction_is_mean_of_trees() {
        let f: Forest<f64> = Forest::from_trees(
            glucose_schema(),
            vec![
                DecisionTree::leaf(vec![0.2, 0.0], 10),
                DecisionTree::leaf(vec![0.4, 1.0], 10),
            ],
        )
        .unwrap();
        let p = f.predict_proba(&record(Value::Number(100.0), 1)).unwrap();
        assert!((p.probabilities[0] - 0.3).abs() < 1e-15);
        assert!((p.probabilities[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_walked_trees() {
        // Tree 1 splits glucose at 150; tree 2 splits on race == "B".
        let t1 = DecisionTree {
            nodes: vec![
                Node::Split {
                    column: 0,
                    threshold: 150.0,
                    left: 1,
                    right: 2,
                    cover: 10,
                },
                Node::Leaf {
                    values: vec![0.1, 0.2],
                    cover: 5,
                },
                Node::Leaf {
                    values: vec![0.9, 0.4],
                    cover: 5,
                },
            ],
        };
        let t2 = DecisionTree {
            nodes: vec![
                Node::Split {
                    column: 2,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    cover: 8,
                },
                Node::Leaf {
                    values: vec![0.3, 0.0],
                    cover: 6,
                },
                Node::Leaf {
                    values: vec![0.5, 1.0],
                    cover: 2,
                },
            ],
        };
        let f: Forest<f64> = Forest::from_trees(glucose_schema(), vec![t1, t2]).unwrap();
        let p = f.predict_proba(&record(Value::Number(319.0), 1)).unwrap();
        assert_eq!(p.probabilities, vec![(0.9 + 0.5) / 2.0, (0.4 + 1.0) / 2.0]);
        let p = f.predict_proba(&record(Value::Number(150.0), 0)).unwrap();
        assert_eq!(p.probabilities, vec![(0.1 + 0.3) / 2.0, (0.2 + 0.0) / 2.0]);
        // missing glucose imputes (40 + 600) / 2 = 320 for hand-built forests
        let p = f.predict_proba(&record(Value::Missing, 2)).unwrap();
        assert_eq!(p.probabilities[0], (0.9 + 0.3) / 2.0);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let f: Forest<f64> = Forest::from_trees(glucose_schema(), vec![DecisionTree::leaf(vec![0.3, 0.6], 10)]).unwrap();
        let bad = PatientRecord {
            id: "x".into(),
            values: vec![Value::Number(100.0)],
        };
        assert!(matches!(f.predict_proba(&bad), Err(Error::SchemaMismatch(_))));
    }

    fn tiny_dataset(labels: Vec<Vec<bool>>) -> Dataset {
        let schema = glucose_schema();
        let records = (0..labels.len())
            .map(|i| PatientRecord {
                id: i.to_string(),
                values: vec![Value::Number(60.0 + 10.0 * i as f64), Value::Level(i % 3)],
            })
            .collect();
        Dataset::new(schema, records, Some(labels)).unwrap()
    }

    #[test]
    fn single_class_outcome_is_named() {
        let d = tiny_dataset(vec![vec![true, true], vec![false, true], vec![true, true]]);
        let err = train_forest::<f64>(&d, &Hyperparams::default(), 1).unwrap_err();
        assert!(matches!(err, Error::SingleClassOutcome(ref o) if o == "aki"));
    }

    #[test]
    fn empty_and_unlabeled_datasets_are_rejected() {
        let d = tiny_dataset(vec![]);
        assert!(matches!(
            train_forest::<f64>(&d, &Hyperparams::default(), 1),
            Err(Error::EmptyDataset)
        ));
        let mut d = tiny_dataset(vec![vec![true, false], vec![false, true]]);
        d.labels = None;
        assert!(matches!(
            train_forest::<f64>(&d, &Hyperparams::default(), 1),
            Err(Error::Unlabeled)
        ));
    }

    #[test]
    fn trained_trees_are_well_formed_and_probabilities_bounded() {
        let labels = (0..40).map(|i| vec![i >= 20, i % 2 == 0]).collect();
        let d = tiny_dataset(labels);
        let hp = Hyperparams {
            n_trees: 10,
            max_depth: 6,
            min_leaf: 1,
            features_per_split_fraction: Some(1.0),
        };
        let f: Forest<f64> = train_forest(&d, &hp, 3).unwrap();
        for t in &f.trees {
            t.check(f.encoder.n_columns, 2).unwrap();
            assert!(t.depth() <= 6);
        }
        for p in f.predict_dataset(&d).unwrap() {
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        assert!(f.base_rates.iter().all(|&b| (0.0..=1.0).contains(&b)));
        let auc = evaluate_auroc(&f, &d).unwrap();
        assert!(auc[0].auroc.unwrap() > 0.9);
    }

    #[test]
    fn f32_forest_trains() {
        let labels = (0..30).map(|i| vec![i >= 15, i % 3 == 0]).collect();
        let d = tiny_dataset(labels);
        let hp = Hyperparams {
            n_trees: 5,
            max_depth: 4,
            min_leaf: 1,
            features_per_split_fraction: None,
        };
        let f: Forest<f32> = train_forest(&d, &hp, 3).unwrap();
        assert_eq!(f.metadata.scalar, "f32");
        let p = f.predict_proba(&d.records[0]).unwrap();
        assert!(p.probabilities.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn evaluate_reports_single_class_outcome_as_undefined() {
        let f: Forest<f64> = Forest::from_trees(glucose_schema(), vec![DecisionTree::leaf(vec![0.3, 0.6], 10)]).unwrap();
        let d = tiny_dataset(vec![vec![true, false], vec![false, false]]);
        let r = evaluate_auroc(&f, &d).unwrap();
        assert_eq!(r[0].auroc, Some(0.5));
        assert_eq!(r[1].auroc, None);
    }
}
