//! "What if" re-scoring of a record under user overrides.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::forest::{Forest, RiskPrediction};
use crate::scalar::Scalar;
use crate::schema::CohortSchema;

/// A record given inline as `{feature: value}` (an optional string `id`
/// key names it) or by id in the reference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordInput {
    Id(String),
    Values(Map<String, Json>),
}

impl RecordInput {
    pub fn resolve(&self, schema: &CohortSchema, reference: Option<&Dataset>) -> Result<PatientRecord> {
        match self {
            RecordInput::Id(id) => reference
                .and_then(|d| d.find(id))
                .cloned()
                .ok_or_else(|| Error::UnknownRecord(id.clone())),
            RecordInput::Values(obj) => {
                let mut obj = obj.clone();
                let id = match obj.remove("id") {
                    Some(Json::String(s)) => s,
                    Some(other) => return Err(Error::invalid("record.id", format!("expected a string, got {other}"))),
                    None => "inline".to_string(),
                };
                PatientRecord::from_json(schema, id, &obj).map_err(|e| prefix_field(e, "record"))
            }
        }
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidValue { field, message } => Error::InvalidValue {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub record: RecordInput,
    #[serde(default)]
    pub overrides: BTreeMap<String, Json>,
    /// Restricts the reported outcomes.
    #[serde(default)]
    pub outcomes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideEcho {
    pub feature: String,
    pub original: Json,
    pub new: Json,
    pub original_display: String,
    pub new_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WhatIfResponse<T: Scalar> {
    pub record_id: String,
    pub original: RiskPrediction<T>,
    pub updated: RiskPrediction<T>,
    pub overrides: Vec<OverrideEcho>,
}

/// Applies validated overrides to a copy of `record`.
pub fn apply_overrides(
    schema: &CohortSchema,
    record: &PatientRecord,
    overrides: &BTreeMap<String, Json>,
) -> Result<(PatientRecord, Vec<OverrideEcho>)> {
    let mut updated = record.clone();
    let mut echo = Vec::with_capacity(overrides.len());
    for (name, json) in overrides {
        let i = schema
            .feature_index(name)
            .ok_or_else(|| Error::invalid(format!("overrides.{name}"), "unknown feature"))?;
        let spec = &schema.features[i];
        let v = Value::from_json(spec, json).map_err(|e| prefix_field(e, "overrides"))?;
        let old = record.values[i];
        updated.values[i] = v;
        echo.push(OverrideEcho {
            feature: name.clone(),
            original: old.to_json(spec),
            new: v.to_json(spec),
            original_display: old.display(spec),
            new_display: v.display(spec),
        });
    }
    Ok((updated, echo))
}

fn filtered<T: Scalar>(p: RiskPrediction<T>, outcomes: Option<&[String]>) -> RiskPrediction<T> {
    match outcomes {
        None => p,
        Some(keep) => {
            let (outcomes, probabilities) = p
                .outcomes
                .into_iter()
                .zip(p.probabilities)
                .filter(|(o, _)| keep.contains(o))
                .unzip();
            RiskPrediction { outcomes, probabilities }
        }
    }
}

/// Scores the base record and its overridden copy. Pure: no state is kept
/// between calls.
pub fn whatif_predict<T: Scalar>(
    model: &Forest<T>,
    reference: Option<&Dataset>,
    request: &WhatIfRequest,
) -> Result<WhatIfResponse<T>> {
    let schema = &model.schema;
    let base = request.record.resolve(schema, reference)?;
    if let Some(keep) = &request.outcomes {
        for o in keep {
            schema.outcome_index(o)?;
        }
    }
    let (updated, overrides) = apply_overrides(schema, &base, &request.overrides)?;
    let keep = request.outcomes.as_deref();
    Ok(WhatIfResponse {
        record_id: base.id.clone(),
        original: filtered(model.predict_proba(&base)?, keep),
        updated: filtered(model.predict_proba(&updated)?, keep),
        overrides,
    })
}
