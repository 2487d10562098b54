//! Schema-conforming records, datasets and the CSV cohort format.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::{format_trimmed, CohortSchema, FeatureKind, FeatureSpec};
use crate::stats;

/// One cell of a patient record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Value {
    Binary(bool),
    /// Index into the feature's declared level list.
    Level(usize),
    Number(f64),
    /// Explicit missing marker; only numerical lab features may carry it.
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match *self {
            Value::Number(x) => Some(x),
            _ => None,
        }
    }

    /// Checks this value against its feature spec.
    pub fn validate(&self, spec: &FeatureSpec) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(&spec.name, m));
        match (&spec.kind, *self) {
            (FeatureKind::Binary, Value::Binary(_)) => Ok(()),
            (FeatureKind::Categorical { levels }, Value::Level(i)) => {
                if i < levels.len() {
                    Ok(())
                } else {
                    bad(format!("level index {i} out of range"))
                }
            }
            (FeatureKind::Numerical { min, max, .. }, Value::Number(x)) => {
                if !x.is_finite() {
                    bad(format!("{x} is not finite"))
                } else if x < *min || x > *max {
                    bad(format!("{x} outside [{min}, {max}]"))
                } else {
                    Ok(())
                }
            }
            (_, Value::Missing) if spec.allows_missing() => Ok(()),
            (_, Value::Missing) => bad("missing values are only allowed for lab features".into()),
            _ => bad(format!("value kind does not match a {} feature", kind_name(spec))),
        }
    }

    /// Parses a CSV cell.
    pub fn parse_cell(spec: &FeatureSpec, cell: &str) -> Result<Value> {
        let cell = cell.trim();
        if cell.is_empty() {
            let v = Value::Missing;
            v.validate(spec)?;
            return Ok(v);
        }
        let v = match &spec.kind {
            FeatureKind::Binary => match cell {
                "1" | "true" => Value::Binary(true),
                "0" | "false" => Value::Binary(false),
                other => {
                    return Err(Error::invalid(
                        &spec.name,
                        format!("`{other}` is not a binary value (0/1)"),
                    ))
                }
            },
            FeatureKind::Categorical { .. } => match spec.level_index(cell) {
                Some(i) => Value::Level(i),
                None => {
                    return Err(Error::invalid(
                        &spec.name,
                        format!("unknown level `{cell}`"),
                    ))
                }
            },
            FeatureKind::Numerical { .. } => {
                let x: f64 = cell.parse().map_err(|_| {
                    Error::invalid(&spec.name, format!("`{cell}` is not a number"))
                })?;
                Value::Number(x)
            }
        };
        v.validate(spec)?;
        Ok(v)
    }

    pub fn to_cell(&self, spec: &FeatureSpec) -> String {
        match *self {
            Value::Binary(b) => if b { "1" } else { "0" }.to_string(),
            Value::Level(i) => spec.levels().map(|l| l[i].clone()).unwrap_or_default(),
            Value::Number(x) => format!("{x}"),
            Value::Missing => String::new(),
        }
    }

    /// Parses a JSON value: bool or 0/1 for binary, a level string for
    /// categorical, a number (or null when missing) for numerical.
    pub fn from_json(spec: &FeatureSpec, json: &Json) -> Result<Value> {
        let v = match (&spec.kind, json) {
            (_, Json::Null) => Value::Missing,
            (FeatureKind::Binary, Json::Bool(b)) => Value::Binary(*b),
            (FeatureKind::Binary, Json::Number(n)) => match n.as_f64() {
                Some(x) if x == 0.0 => Value::Binary(false),
                Some(x) if x == 1.0 => Value::Binary(true),
                _ => return Err(Error::invalid(&spec.name, format!("{n} is not 0 or 1"))),
            },
            (FeatureKind::Categorical { .. }, Json::String(s)) => match spec.level_index(s) {
                Some(i) => Value::Level(i),
                None => return Err(Error::invalid(&spec.name, format!("unknown level `{s}`"))),
            },
            (FeatureKind::Numerical { .. }, Json::Number(n)) => Value::Number(
                n.as_f64()
                    .ok_or_else(|| Error::invalid(&spec.name, "not a finite number"))?,
            ),
            _ => {
                return Err(Error::invalid(
                    &spec.name,
                    format!("expected a {} value, got {json}", kind_name(spec)),
                ))
            }
        };
        v.validate(spec)?;
        Ok(v)
    }

    pub fn to_json(&self, spec: &FeatureSpec) -> Json {
        match *self {
            Value::Binary(b) => Json::Bool(b),
            Value::Level(i) => Json::String(spec.levels().map(|l| l[i].clone()).unwrap_or_default()),
            Value::Number(x) => serde_json::Number::from_f64(x)
                .map(Json::Number)
                .unwrap_or(Json::Null),
            Value::Missing => Json::Null,
        }
    }

    /// Human-readable rendering, e.g. `7.1 g/dL`, `Yes`, `African American`.
    pub fn display(&self, spec: &FeatureSpec) -> String {
        match *self {
            Value::Binary(true) => "Yes".into(),
            Value::Binary(false) => "No".into(),
            Value::Level(i) => spec.levels().map(|l| l[i].clone()).unwrap_or_default(),
            Value::Number(x) => spec.format_number(x),
            Value::Missing => "missing".into(),
        }
    }
}

fn kind_name(spec: &FeatureSpec) -> &'static str {
    match spec.kind {
        FeatureKind::Binary => "binary",
        FeatureKind::Categorical { .. } => "categorical",
        FeatureKind::Numerical { .. } => "numerical",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub values: Vec<Value>,
}

impl PatientRecord {
    pub fn new(schema: &CohortSchema, id: impl Into<String>, values: Vec<Value>) -> Result<Self> {
        let r = PatientRecord {
            id: id.into(),
            values,
        };
        r.validate(schema)?;
        Ok(r)
    }

    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        if self.values.len() != schema.arity() {
            return Err(Error::SchemaMismatch(format!(
                "record `{}` has {} values, schema has {} features",
                self.id,
                self.values.len(),
                schema.arity()
            )));
        }
        for (v, spec) in self.values.iter().zip(&schema.features) {
            v.validate(spec)?;
        }
        Ok(())
    }

    pub fn get(&self, schema: &CohortSchema, feature: &str) -> Result<Value> {
        Ok(self.values[schema
            .feature_index(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.into()))?])
    }

    /// Builds a record from a `{feature: value}` JSON object covering every
    /// schema feature.
    pub fn from_json(schema: &CohortSchema, id: impl Into<String>, obj: &Map<String, Json>) -> Result<Self> {
        for key in obj.keys() {
            if schema.feature_index(key).is_none() {
                return Err(Error::UnknownFeature(key.clone()));
            }
        }
        let values = schema
            .features
            .iter()
            .map(|spec| match obj.get(&spec.name) {
                Some(j) => Value::from_json(spec, j),
                None => Err(Error::invalid(&spec.name, "value is required")),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatientRecord {
            id: id.into(),
            values,
        })
    }

    pub fn to_json(&self, schema: &CohortSchema) -> Map<String, Json> {
        schema
            .features
            .iter()
            .zip(&self.values)
            .map(|(spec, v)| (spec.name.clone(), v.to_json(spec)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Arc<CohortSchema>,
    pub records: Vec<PatientRecord>,
    /// `labels[i][k]` is the outcome `k` label of record `i`.
    pub labels: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn new(
        schema: Arc<CohortSchema>,
        records: Vec<PatientRecord>,
        labels: Option<Vec<Vec<bool>>>,
    ) -> Result<Self> {
        for r in &records {
            r.validate(&schema)?;
        }
        if let Some(l) = &labels {
            if l.len() != records.len() || l.iter().any(|row| row.len() != schema.outcomes.len()) {
                return Err(Error::Config(format!(
                    "label matrix must be {} x {}",
                    records.len(),
                    schema.outcomes.len()
                )));
            }
        }
        Ok(Dataset {
            schema,
            records,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn find(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Observed labels of one outcome.
    pub fn outcome_labels(&self, outcome: usize) -> Option<Vec<bool>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|row| row[outcome]).collect())
    }

    /// Non-missing values of a numerical feature, in row order.
    pub fn numeric_column(&self, feature: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.values[feature].as_number())
            .collect()
    }

    /// Sub-dataset with the given row indices (labels follow).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Linear-interpolation quantiles `(Q(low_q), Q(high_q))` of a numerical
    /// feature, excluding missing values.
    pub fn percentile_bounds(&self, feature: &str, low_q: f64, high_q: f64) -> Result<(f64, f64)> {
        let idx = self
            .schema
            .feature_index(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.into()))?;
        if !self.schema.features[idx].is_numerical() {
            return Err(Error::invalid(feature, "percentile bounds need a numerical feature"));
        }
        if !(0.0..=1.0).contains(&low_q) || !(0.0..=1.0).contains(&high_q) || low_q >= high_q {
            return Err(Error::Config(format!(
                "quantiles must satisfy 0 <= low < high <= 1 (got {low_q}, {high_q})"
            )));
        }
        let mut col = self.numeric_column(idx);
        if col.is_empty() {
            return Err(Error::invalid(feature, "all values are missing"));
        }
        col.sort_by(f64::total_cmp);
        Ok((stats::quantile_sorted(&col, low_q), stats::quantile_sorted(&col, high_q)))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let schema = &self.schema;
        let mut header = vec!["id".to_string()];
        header.extend(schema.features.iter().map(|f| f.name.clone()));
        if self.labels.is_some() {
            header.extend(schema.outcomes.iter().cloned());
        }
        w.write_record(&header).map_err(csv_err)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row = vec![r.id.clone()];
            row.extend(
                r.values
                    .iter()
                    .zip(&schema.features)
                    .map(|(v, spec)| v.to_cell(spec)),
            );
            if let Some(l) = &self.labels {
                row.extend(l[i].iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// SHA-256 of the canonical CSV rendering, first 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn read_csv<R: Read>(reader: R, schema: Arc<CohortSchema>, has_labels: bool) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();

        let mut id_col = None;
        let mut feature_cols = vec![None; schema.arity()];
        let mut outcome_cols = vec![None; schema.outcomes.len()];
        for (c, name) in header.iter().enumerate() {
            let name = name.trim();
            if name == "id" {
                id_col = Some(c);
            } else if let Some(f) = schema.feature_index(name) {
                feature_cols[f] = Some(c);
            } else if let (true, Ok(o)) = (has_labels, schema.outcome_index(name)) {
                outcome_cols[o] = Some(c);
            } else {
                return Err(Error::UnknownColumn(name.to_string()));
            }
        }
        let feature_cols = feature_cols
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::MissingColumn(schema.features[i].name.clone())))
            .collect::<Result<Vec<_>>>()?;
        let outcome_cols = if has_labels {
            outcome_cols
                .into_iter()
                .enumerate()
                .map(|(i, c)| c.ok_or_else(|| Error::MissingColumn(schema.outcomes[i].clone())))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let mut records = Vec::new();
        let mut labels = Vec::new();
        for (row_idx, row) in rdr.records().enumerate() {
            // 1-based data row number, header excluded.
            let row_no = row_idx + 1;
            let row = row.map_err(csv_err)?;
            let cell = |c: usize| row.get(c).unwrap_or("");
            let id = match id_col {
                Some(c) => cell(c).to_string(),
                None => format!("row{row_no}"),
            };
            let values = feature_cols
                .iter()
                .zip(&schema.features)
                .map(|(&c, spec)| {
                    Value::parse_cell(spec, cell(c)).map_err(|e| Error::Cell {
                        row: row_no,
                        column: spec.name.clone(),
                        message: match e {
                            Error::InvalidValue { message, .. } => message,
                            other => other.to_string(),
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(PatientRecord { id, values });
            if has_labels {
                let l = outcome_cols
                    .iter()
                    .zip(&schema.outcomes)
                    .map(|(&c, name)| match cell(c).trim() {
                        "1" | "true" => Ok(true),
                        "0" | "false" => Ok(false),
                        other => Err(Error::Cell {
                            row: row_no,
                            column: name.clone(),
                            message: format!("`{other}` is not a binary label"),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                labels.push(l);
            }
        }
        Ok(Dataset {
            schema,
            records,
            labels: has_labels.then_some(labels),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

pub fn load_csv(path: impl AsRef<Path>, schema: Arc<CohortSchema>, has_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(std::io::BufReader::new(f), schema, has_labels)
}

/// Loads a CSV, treating it as labeled when any outcome column is present.
pub fn load_csv_auto(path: impl AsRef<Path>, schema: Arc<CohortSchema>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(csv_err)?;
    let has_labels = header.iter().any(|h| schema.outcomes.iter().any(|o| o == h.trim()));
    Dataset::read_csv(bytes.as_slice(), schema, has_labels)
}

/// Renders a numeric threshold the way condition texts show it.
pub(crate) fn format_threshold(spec: &FeatureSpec, x: f64) -> String {
    match spec.precision {
        Some(p) => format!("{:.*}", p as usize + 1, x)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string(),
        None => format_trimmed(x),
    }
}
