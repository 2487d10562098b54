//! Scalar-generic statistics: quantiles, Mann–Whitney AUROC, ROC polylines,
//! rank correlation.

use serde::{Deserialize, Serialize};

use crate::scalar::{from_usize, lit, Scalar};

/// Linear-interpolation quantile at rank `1 + q(n-1)` of an ascending slice.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = lit::<T>(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some(quantile_sorted(&v, 0.5))
}

/// Median absolute deviation from the median (unscaled).
pub fn median_abs_deviation<T: Scalar>(values: &[T]) -> Option<T> {
    let m = median(values)?;
    let dev: Vec<T> = values.iter().map(|&x| (x - m).abs()).collect();
    median(&dev)
}

/// AUROC as the Mann–Whitney statistic `P(s+ > s-) + ½ P(s+ = s-)`, via
/// tie-averaged ranks. `None` when either class is absent.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Sum of (1-based, tie-averaged) ranks of the positives, doubled so it
    // stays an integer.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        // average rank of the group = (i+1 + j+1) / 2
        rank_sum2 += pos_in_group * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC polyline from (0,0) to (1,1), one vertex per distinct score.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Option<Vec<RocPoint>> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Some(points)
}

/// Tie-averaged ranks (1-based).
pub fn ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut out = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = from_usize::<T>(i + j + 2) / lit(2.0);
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on tie-averaged ranks).
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = from_usize::<T>(a.len());
    let ma = ra.iter().copied().sum::<T>() / n;
    let mb = rb.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in ra.iter().zip(&rb) {
        sab = sab + (x - ma) * (y - mb);
        saa = saa + (x - ma) * (x - ma);
        sbb = sbb + (y - mb) * (y - mb);
    }
    if saa == T::zero() || sbb == T::zero() {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
