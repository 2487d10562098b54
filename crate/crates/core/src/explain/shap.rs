//! Shapley attributions for the forest under path-dependent (cover-weighted)
//! feature removal.
//!
//! Two routes compute the same quantity:
//! * [`explain_shap_exact`] enumerates every coalition of encoded columns
//!   and evaluates the tree expectation for each one (O(2^d));
//! * [`explain_shap_tree`] runs the polynomial path-tracking recursion,
//!   which follows each root-to-leaf path once while maintaining the
//!   permutation weights of the features seen so far.
//!
//! One-hot columns are summed back into one value per schema feature.

use serde::{Deserialize, Serialize};

use super::{sort_by_magnitude, Attribution, Contribution, Method};
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::forest::{DecisionTree, Forest, Node};
use crate::scalar::{from_usize, lit, to_f64, Scalar};

pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMode {
    Exact,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    pub mode: ShapMode,
    pub max_exact_features: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            mode: ShapMode::Tree,
            max_exact_features: 12,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_exact_features > MAX_EXACT_FEATURES {
            return Err(Error::Config(format!(
                "max_exact_features must be at most {MAX_EXACT_FEATURES}"
            )));
        }
        Ok(())
    }
}

pub fn explain_shap<T: Scalar>(
    model: &Forest<T>,
    record: &PatientRecord,
    outcome: &str,
    config: &ShapConfig,
) -> Result<Attribution<T>> {
    config.validate()?;
    match config.mode {
        ShapMode::Exact => explain_shap_exact_with_guard(model, record, outcome, config.max_exact_features),
        ShapMode::Tree => explain_shap_tree(model, record, outcome),
    }
}

/// Expected output of one tree for `outcome` with no features known.
pub fn expected_value<T: Scalar>(tree: &DecisionTree<T>, outcome: usize) -> T {
    conditional_expectation(tree, 0, None, &[], outcome)
}

/// [`expected_value`] for every outcome in one traversal.
pub fn expected_values<T: Scalar>(tree: &DecisionTree<T>, n_outcomes: usize) -> Vec<T> {
    fn go<T: Scalar>(tree: &DecisionTree<T>, node: usize, weight: T, out: &mut [T]) {
        match &tree.nodes[node] {
            Node::Leaf { values, .. } => {
                for (o, v) in out.iter_mut().zip(values) {
                    *o = *o + weight * *v;
                }
            }
            Node::Split { left, right, cover, .. } => {
                let cover = from_usize::<T>(*cover);
                for child in [*left, *right] {
                    let w = weight * from_usize(tree.nodes[child].cover()) / cover;
                    go(tree, child, w, out);
                }
            }
        }
    }
    let mut out = vec![T::zero(); n_outcomes];
    go(tree, 0, T::one(), &mut out);
    out
}

/// Path-dependent conditional expectation: splits on columns in the
/// coalition follow `row`; other splits average both children by cover.
fn conditional_expectation<T: Scalar>(
    tree: &DecisionTree<T>,
    node: usize,
    row: Option<&[T]>,
    in_coalition: &[bool],
    outcome: usize,
) -> T {
    match &tree.nodes[node] {
        Node::Leaf { values, .. } => values[outcome],
        Node::Split {
            column,
            threshold,
            left,
            right,
            cover,
        } => match row {
            Some(x) if in_coalition[*column] => {
                let next = if x[*column] <= *threshold { *left } else { *right };
                conditional_expectation(tree, next, row, in_coalition, outcome)
            }
            _ => {
                let cl = from_usize::<T>(tree.nodes[*left].cover());
                let cr = from_usize::<T>(tree.nodes[*right].cover());
                let el = conditional_expectation(tree, *left, row, in_coalition, outcome);
                let er = conditional_expectation(tree, *right, row, in_coalition, outcome);
                (cl * el + cr * er) / from_usize(*cover)
            }
        },
    }
}

fn forest_value<T: Scalar>(model: &Forest<T>, row: &[T], in_coalition: &[bool], outcome: usize) -> T {
    let s: T = model
        .trees
        .iter()
        .map(|t| conditional_expectation(t, 0, Some(row), in_coalition, outcome))
        .sum();
    s / from_usize(model.trees.len())
}

/// Brute-force Shapley values over encoded columns. Guarded at
/// [`ShapConfig::default`]'s `max_exact_features`.
pub fn explain_shap_exact<T: Scalar>(model: &Forest<T>, record: &PatientRecord, outcome: &str) -> Result<Attribution<T>> {
    explain_shap_exact_with_guard(model, record, outcome, ShapConfig::default().max_exact_features)
}

pub fn explain_shap_exact_with_guard<T: Scalar>(
    model: &Forest<T>,
    record: &PatientRecord,
    outcome: &str,
    max_exact_features: usize,
) -> Result<Attribution<T>> {
    let k = model.schema.outcome_index(outcome)?;
    model.check_record(record)?;
    let d = model.encoder.n_columns;
    let limit = max_exact_features.min(MAX_EXACT_FEATURES);
    if d > limit {
        return Err(Error::DimensionGuard { dims: d, limit });
    }
    let row = model.encode(record);

    // v(S) for every coalition mask.
    let mut values = Vec::with_capacity(1 << d);
    let mut member = vec![false; d];
    for mask in 0usize..(1 << d) {
        for (j, m) in member.iter_mut().enumerate() {
            *m = mask & (1 << j) != 0;
        }
        values.push(forest_value(model, &row, &member, k));
    }

    // w(s) = s!(d-s-1)!/d! = 1 / (d · C(d-1, s))
    let weights: Vec<T> = (0..d)
        .map(|s| {
            let mut c = 1.0f64;
            for i in 0..s {
                c = c * (d - 1 - i) as f64 / (i + 1) as f64;
            }
            lit::<T>(1.0 / (d as f64 * c.round()))
        })
        .collect();

    let mut phi = vec![T::zero(); d];
    for (j, p) in phi.iter_mut().enumerate() {
        let bit = 1 << j;
        let mut acc = T::zero();
        for mask in 0usize..(1 << d) {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                acc = acc + weights[s] * (values[mask | bit] - values[mask]);
            }
        }
        *p = acc;
    }
    let base = values[0];
    let prediction = values[(1 << d) - 1];
    Ok(assemble(model, record, outcome, base, prediction, &phi))
}

#[derive(Clone, Copy, Default)]
struct PathElement<T> {
    column: Option<usize>,
    zero_fraction: T,
    one_fraction: T,
    weight: T,
}

/// Appends an element to `path[..depth]`, which must have room for it.
fn extend_path<T: Scalar>(path: &mut [PathElement<T>], depth: usize, zero_fraction: T, one_fraction: T, column: Option<usize>) {
    path[depth] = PathElement {
        column,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { T::one() } else { T::zero() },
    };
    let d1 = from_usize::<T>(depth + 1);
    for i in (0..depth).rev() {
        let wi = path[i].weight;
        path[i + 1].weight = path[i + 1].weight + one_fraction * wi * from_usize(i + 1) / d1;
        path[i].weight = zero_fraction * wi * from_usize(depth - i) / d1;
    }
}

/// Removes element `index` from `path[..=depth]`, undoing its extension.
fn unwind_path<T: Scalar>(path: &mut [PathElement<T>], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = from_usize::<T>(depth + 1);
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != T::zero() {
            let tmp = path[i].weight;
            path[i].weight = next_one * d1 / (from_usize::<T>(i + 1) * one);
            next_one = tmp - path[i].weight * zero * from_usize(depth - i) / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * from_usize(depth - i));
        }
    }
    for i in index..depth {
        path[i].column = path[i + 1].column;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total permutation weight of `path[..=depth]` with element `index` removed.
/// `recip[i]` is `1 / i`.
fn unwound_path_sum<T: Scalar>(path: &[PathElement<T>], depth: usize, index: usize, recip: &[T]) -> T {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = from_usize::<T>(depth + 1);
    let mut total = T::zero();
    if one != T::zero() {
        let scale = d1 / one;
        let back = zero * recip[depth + 1];
        let mut next_one = path[depth].weight;
        for i in (0..depth).rev() {
            let tmp = next_one * scale * recip[i + 1];
            total = total + tmp;
            next_one = path[i].weight - tmp * back * from_usize(depth - i);
        }
    } else {
        for i in (0..depth).rev() {
            total = total + path[i].weight * recip[depth - i];
        }
        total = total * d1 / zero;
    }
    total
}

/// Adds one tree's attributions for all outcomes into `phi[column][outcome]`.
///
/// `buf` holds the parent path in `buf[..depth]`; this call works on a copy
/// starting at `buf[depth..]`, so each recursion level owns its own slice.
#[allow(clippy::too_many_arguments)]
fn tree_shap_recurse<T: Scalar>(
    tree: &DecisionTree<T>,
    node: usize,
    row: &[T],
    buf: &mut [PathElement<T>],
    depth: usize,
    zero_fraction: T,
    one_fraction: T,
    column: Option<usize>,
    recip: &[T],
    phi: &mut [Vec<T>],
) {
    let (parent, rest) = buf.split_at_mut(depth);
    rest[..depth].copy_from_slice(parent);
    let path = rest;
    extend_path(path, depth, zero_fraction, one_fraction, column);
    let mut depth = depth;

    match &tree.nodes[node] {
        Node::Leaf { values, .. } => {
            for i in 1..=depth {
                let w = unwound_path_sum(path, depth, i, recip);
                let el = path[i];
                let scale = w * (el.one_fraction - el.zero_fraction);
                let col = el.column.expect("non-root path element has a column");
                for (p, v) in phi[col].iter_mut().zip(values) {
                    *p = *p + scale * *v;
                }
            }
        }
        Node::Split {
            column: split_col,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if row[*split_col] <= *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let mut incoming_zero = T::one();
            let mut incoming_one = T::one();
            if let Some(k) = (1..=depth).find(|&k| path[k].column == Some(*split_col)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(path, depth, k);
                depth -= 1;
            }
            let cover = from_usize::<T>(*cover);
            let hot_zero = from_usize::<T>(tree.nodes[hot].cover()) / cover;
            let cold_zero = from_usize::<T>(tree.nodes[cold].cover()) / cover;
            let next = depth + 1;
            tree_shap_recurse(
                tree,
                hot,
                row,
                path,
                next,
                hot_zero * incoming_zero,
                incoming_one,
                Some(*split_col),
                recip,
                phi,
            );
            tree_shap_recurse(
                tree,
                cold,
                row,
                path,
                next,
                cold_zero * incoming_zero,
                T::zero(),
                Some(*split_col),
                recip,
                phi,
            );
        }
    }
}

/// Forest-level Shapley values over encoded columns for every outcome:
/// returns `(base[outcome], phi[column][outcome])`.
pub fn shap_values_encoded<T: Scalar>(model: &Forest<T>, row: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
    let k = model.n_outcomes();
    let mut phi = vec![vec![T::zero(); k]; model.encoder.n_columns];
    let mut base = vec![T::zero(); k];
    let max_depth = model.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
    // each level copies its parent path, so level d starts at d(d+1)/2
    let levels = max_depth + 2;
    let mut buf = vec![PathElement::default(); levels * (levels + 1) / 2 + levels];
    let recip: Vec<T> = (0..=levels + 1).map(|i| T::one() / from_usize(i.max(1))).collect();
    for t in &model.trees {
        tree_shap_recurse(t, 0, row, &mut buf, 0, T::one(), T::one(), None, &recip, &mut phi);
        for (b, e) in base.iter_mut().zip(expected_values(t, k)) {
            *b = *b + e;
        }
    }
    let n = from_usize::<T>(model.trees.len());
    for col in phi.iter_mut() {
        col.iter_mut().for_each(|p| *p = *p / n);
    }
    base.iter_mut().for_each(|b| *b = *b / n);
    (base, phi)
}

/// Per-schema-feature Shapley values for every outcome:
/// `(base[outcome], phi[feature][outcome])`.
pub fn shap_values_by_feature<T: Scalar>(model: &Forest<T>, record: &PatientRecord) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    model.check_record(record)?;
    let (base, phi) = shap_values_encoded(model, &model.encode(record));
    let grouped = model
        .encoder
        .groups
        .iter()
        .map(|g| {
            (0..model.n_outcomes())
                .map(|o| phi[g.start..g.start + g.len].iter().map(|c| c[o]).sum())
                .collect()
        })
        .collect();
    Ok((base, grouped))
}

/// Polynomial-time tree Shapley values; same contract as the exact oracle.
pub fn explain_shap_tree<T: Scalar>(model: &Forest<T>, record: &PatientRecord, outcome: &str) -> Result<Attribution<T>> {
    let k = model.schema.outcome_index(outcome)?;
    model.check_record(record)?;
    let row = model.encode(record);
    let (base, phi) = shap_values_encoded(model, &row);
    let phi_k: Vec<T> = phi.iter().map(|c| c[k]).collect();
    let prediction = model.predict_outcome_encoded(&row, k);
    Ok(assemble(model, record, outcome, base[k], prediction, &phi_k))
}

fn assemble<T: Scalar>(
    model: &Forest<T>,
    record: &PatientRecord,
    outcome: &str,
    base_value: T,
    prediction: T,
    phi: &[T],
) -> Attribution<T> {
    let schema = &model.schema;
    let mut contributions: Vec<Contribution<T>> = model
        .encoder
        .groups
        .iter()
        .map(|g| {
            let spec = &schema.features[g.feature];
            let value: T = phi[g.start..g.start + g.len].iter().copied().sum();
            Contribution {
                feature: spec.name.clone(),
                condition: format!("{} = {}", spec.display_name, record.values[g.feature].display(spec)),
                value,
            }
        })
        .collect();

    let total: T = contributions.iter().map(|c| c.value).sum();
    let gap = (base_value + total - prediction).abs();
    debug_assert!(
        gap <= T::additivity_tolerance() * (T::one() + prediction.abs()),
        "Shapley additivity violated by {}",
        to_f64(gap)
    );

    sort_by_magnitude(&mut contributions);
    Attribution {
        method: Method::Shap,
        outcome: outcome.to_string(),
        base_value,
        prediction,
        contributions,
        surrogate_r2: None,
    }
}
