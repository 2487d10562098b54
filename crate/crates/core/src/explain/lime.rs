//! Tabular LIME: a kernel-weighted ridge surrogate over binary
//! "same bin as the patient" indicators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sort_by_magnitude, Attribution, Contribution, Method};
use crate::data::{format_threshold, Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::scalar::{from_usize, lit, Scalar};
use crate::schema::{CohortSchema, FeatureKind, FeatureSpec};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Defaults to `0.75 * sqrt(feature count)`.
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 5000,
            kernel_width: None,
            top_k: 10,
            ridge_lambda: 1.0,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::Config("LIME needs n_samples >= 100".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config("kernel_width must be positive".into()));
            }
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config("ridge_lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kernel_width_for(&self, n_features: usize) -> f64 {
        self.kernel_width
            .unwrap_or_else(|| 0.75 * (n_features as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureBackground {
    /// Observed non-missing training values.
    values: Vec<Value>,
    /// Ascending, de-duplicated quartile boundaries (numerical only).
    boundaries: Vec<f64>,
}

/// Training marginals and quartile discretization used to perturb records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeBackground {
    features: Vec<FeatureBackground>,
}

impl LimeBackground {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let features = dataset
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let values: Vec<Value> = dataset
                    .records
                    .iter()
                    .map(|r| r.values[i])
                    .filter(|v| !v.is_missing())
                    .collect();
                if values.is_empty() {
                    return Err(Error::invalid(&spec.name, "no observed training values"));
                }
                let mut boundaries = Vec::new();
                if spec.is_numerical() {
                    let mut col = dataset.numeric_column(i);
                    col.sort_by(f64::total_cmp);
                    for q in [0.25, 0.5, 0.75] {
                        let b = stats::quantile_sorted(&col, q);
                        if boundaries.last() != Some(&b) {
                            boundaries.push(b);
                        }
                    }
                }
                Ok(FeatureBackground { values, boundaries })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LimeBackground { features })
    }

    /// Quartile boundaries of a numerical feature.
    pub fn boundaries(&self, feature: usize) -> &[f64] {
        &self.features[feature].boundaries
    }
}

fn bin(boundaries: &[f64], x: f64) -> usize {
    boundaries.iter().filter(|&&b| x > b).count()
}

fn with_unit(spec: &FeatureSpec, text: String) -> String {
    match spec.unit() {
        Some(u) if !u.is_empty() => format!("{text} {u}"),
        _ => text,
    }
}

fn condition_text(spec: &FeatureSpec, boundaries: &[f64], reference: Value, effective: Option<f64>) -> String {
    let name = &spec.display_name;
    match (&spec.kind, effective) {
        (FeatureKind::Numerical { .. }, Some(x)) => {
            if boundaries.is_empty() {
                return with_unit(spec, format!("{name} = {}", format_threshold(spec, x)));
            }
            let b = bin(boundaries, x);
            let t = |i: usize| format_threshold(spec, boundaries[i]);
            let text = if b == 0 {
                format!("{name} ≤ {}", t(0))
            } else if b == boundaries.len() {
                format!("{name} > {}", t(b - 1))
            } else {
                format!("{} < {name} ≤ {}", t(b - 1), t(b))
            };
            with_unit(spec, text)
        }
        _ => format!("{name} = {}", reference.display(spec)),
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major, n×n).
fn cholesky_solve<T: Scalar>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s = s - l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

struct Surrogate<T> {
    intercept: T,
    coefficients: Vec<T>,
    r2: T,
}

/// Weighted ridge regression with an unpenalized intercept.
fn fit_weighted_ridge<T: Scalar>(z: &[Vec<bool>], y: &[T], w: &[T], lambda: T) -> Option<Surrogate<T>> {
    let p = z.first()?.len();
    let sw: T = w.iter().copied().sum();
    let mut xbar = vec![T::zero(); p];
    let mut ybar = T::zero();
    for ((zi, &yi), &wi) in z.iter().zip(y).zip(w) {
        for (m, &b) in xbar.iter_mut().zip(zi) {
            if b {
                *m = *m + wi;
            }
        }
        ybar = ybar + wi * yi;
    }
    xbar.iter_mut().for_each(|m| *m = *m / sw);
    ybar = ybar / sw;

    let mut a = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut xc = vec![T::zero(); p];
    for ((zi, &yi), &wi) in z.iter().zip(y).zip(w) {
        for j in 0..p {
            xc[j] = if zi[j] { T::one() } else { T::zero() } - xbar[j];
        }
        let yc = yi - ybar;
        for j in 0..p {
            let wx = wi * xc[j];
            rhs[j] = rhs[j] + wx * yc;
            for k in 0..=j {
                a[j * p + k] = a[j * p + k] + wx * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[k * p + j] = a[j * p + k];
        }
        // Tiny jitter keeps constant columns solvable when lambda is zero.
        a[j * p + j] = a[j * p + j] + lambda + lit(1e-12);
    }
    let beta = cholesky_solve(&a, &rhs, p)?;
    let intercept = ybar - beta.iter().zip(&xbar).map(|(&b, &m)| b * m).sum::<T>();

    let (mut ss_res, mut ss_tot) = (T::zero(), T::zero());
    for ((zi, &yi), &wi) in z.iter().zip(y).zip(w) {
        let fit = intercept
            + beta
                .iter()
                .zip(zi)
                .filter(|(_, &b)| b)
                .map(|(&c, _)| c)
                .sum::<T>();
        ss_res = ss_res + wi * (yi - fit) * (yi - fit);
        ss_tot = ss_tot + wi * (yi - ybar) * (yi - ybar);
    }
    let r2 = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else {
        T::one()
    };
    Some(Surrogate {
        intercept,
        coefficients: beta,
        r2,
    })
}

/// Value of a perturbation unit falls in the same bin / level as the
/// patient's.
fn same_unit(a: Value, reference: Value, boundaries: &[f64], reference_x: Option<f64>) -> bool {
    match (a, reference_x) {
        (Value::Number(x), Some(rx)) => bin(boundaries, x) == bin(boundaries, rx),
        _ => a == reference,
    }
}

pub fn explain_lime<T: Scalar>(
    model: &Forest<T>,
    background: &LimeBackground,
    record: &PatientRecord,
    outcome: &str,
    config: &LimeConfig,
) -> Result<Attribution<T>> {
    config.validate()?;
    let k = model.schema.outcome_index(outcome)?;
    model.check_record(record)?;
    let schema: &CohortSchema = &model.schema;
    if background.features.len() != schema.arity() {
        return Err(Error::SchemaMismatch("LIME background was fit on another schema".into()));
    }
    let f = schema.arity();
    let effective: Vec<Option<f64>> = (0..f).map(|j| model.effective_number(record, j)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base_row = model.encode(record);
    let mut z = Vec::with_capacity(config.n_samples);
    let mut y = Vec::with_capacity(config.n_samples);
    z.push(vec![true; f]);
    y.push(model.predict_outcome_encoded(&base_row, k));
    let mut row = base_row.clone();
    for _ in 1..config.n_samples {
        let mut zi = Vec::with_capacity(f);
        for (j, bg) in background.features.iter().enumerate() {
            let v = bg.values[rng.random_range(0..bg.values.len())];
            zi.push(same_unit(v, record.values[j], &bg.boundaries, effective[j]));
            model
                .encoder
                .encode_value(j, v, model.imputation[j], &mut row);
        }
        y.push(model.predict_outcome_encoded(&row, k));
        z.push(zi);
    }

    let mut distinct = z.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config(
            "perturbations produced fewer than 2 distinct samples".into(),
        ));
    }

    let width = lit::<T>(config.kernel_width_for(f));
    let nf = from_usize::<T>(f);
    let w: Vec<T> = z
        .iter()
        .map(|zi| {
            let d = from_usize::<T>(zi.iter().filter(|&&b| !b).count()) / nf;
            (-(d * d) / (width * width)).exp()
        })
        .collect();

    let surrogate = fit_weighted_ridge(&z, &y, &w, lit(config.ridge_lambda))
        .ok_or_else(|| Error::Config("surrogate system is singular".into()))?;

    let mut contributions: Vec<Contribution<T>> = schema
        .features
        .iter()
        .enumerate()
        .map(|(j, spec)| Contribution {
            feature: spec.name.clone(),
            condition: condition_text(spec, &background.features[j].boundaries, record.values[j], effective[j]),
            value: surrogate.coefficients[j],
        })
        .collect();
    sort_by_magnitude(&mut contributions);
    contributions.truncate(config.top_k);

    Ok(Attribution {
        method: Method::Lime,
        outcome: outcome.to_string(),
        base_value: surrogate.intercept,
        prediction: y[0],
        contributions,
        surrogate_r2: Some(surrogate.r2),
    })
}
