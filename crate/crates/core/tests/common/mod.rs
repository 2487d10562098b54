#![allow(dead_code)]

pub mod oracles;

use std::sync::{Arc, OnceLock};

use riskxai::{generate_synthetic_cohort, CohortSchema, Dataset, GeneratorConfig, PatientRecord, Value};

pub fn schema() -> Arc<CohortSchema> {
    static S: OnceLock<Arc<CohortSchema>> = OnceLock::new();
    S.get_or_init(|| Arc::new(CohortSchema::default_surgical())).clone()
}

/// Labeled default-generator cohort of `n` records.
pub fn cohort(n: usize, seed: u64) -> Dataset {
    generate_synthetic_cohort(schema(), &GeneratorConfig::default_surgical(), seed, n)
        .unwrap()
        .dataset
}

/// A shared 2,000-record reference cohort.
pub fn reference() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| cohort(2000, 7))
}

pub fn with_value(record: &PatientRecord, schema: &CohortSchema, feature: &str, v: Value) -> PatientRecord {
    let mut r = record.clone();
    r.values[schema.feature_index(feature).unwrap()] = v;
    r
}

/// Default generator with `trauma_room` pinned to "No", so no tree can
/// split on it.
pub fn generator_with_constant_trauma_room() -> GeneratorConfig {
    let mut g = GeneratorConfig::default_surgical();
    g.marginals.insert(
        "trauma_room".into(),
        riskxai::synth::FeatureMarginal {
            dist: riskxai::synth::Marginal::Bernoulli { p: 0.0 },
            missing_rate: 0.0,
        },
    );
    g
}

pub fn cohort_with(config: &GeneratorConfig, n: usize, seed: u64) -> Dataset {
    generate_synthetic_cohort(schema(), config, seed, n).unwrap().dataset
}
