//! Explainable random-forest risk prediction over a declarative tabular
//! schema.
//!
//! The model layer is generic over a [`Scalar`] (`f32` or `f64`); the type
//! aliases at the crate root fix it to `f64`, which is what the CLI and the
//! service use.

pub mod counterfactual;
pub mod data;
pub mod error;
pub mod explain;
pub mod forest;
pub mod insight;
pub mod scalar;
pub mod schema;
pub mod stats;
pub mod synth;
pub mod whatif;

pub use counterfactual::{find_counterfactuals, CfConfig, CfConstraints, Direction};
pub use data::{load_csv, load_csv_auto, Dataset, PatientRecord, Value};
pub use error::{Error, Result};
pub use explain::lime::{explain_lime, LimeBackground, LimeConfig};
pub use explain::shap::{explain_shap, explain_shap_exact, explain_shap_tree, ShapConfig, ShapMode};
pub use forest::{evaluate_auroc, load_model, save_model, train_forest, Hyperparams};
pub use insight::{
    build_model_card, cohort_summary, find_similar, global_importance, CardConfig, ImportanceConfig, ModelCard,
    SimilarityCriteria, SubgroupPair,
};
pub use scalar::Scalar;
pub use schema::{load_schema, CohortSchema, FeatureKind, FeatureSpec, FeatureTag};
pub use synth::{generate_synthetic_cohort, GeneratorConfig, SyntheticCohort};
pub use whatif::{whatif_predict, RecordInput, WhatIfRequest};

pub type RandomForest = forest::Forest<f64>;
pub type RandomForestF32 = forest::Forest<f32>;
pub type RiskPrediction = forest::RiskPrediction<f64>;
pub type Attribution = explain::Attribution<f64>;
pub type CounterfactualResult = counterfactual::CounterfactualResult<f64>;
pub type CounterfactualSearch = counterfactual::CounterfactualSearch<f64>;
pub type CohortSummary = insight::CohortSummary<f64>;
pub type WhatIfResponse = whatif::WhatIfResponse<f64>;
