//! Local "why" explanations. LIME and SHAP both produce an [`Attribution`].

pub mod lime;
pub mod shap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Lime,
    Shap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Contribution<T: Scalar> {
    pub feature: String,
    /// e.g. `Hemoglobin ≤ 10.2 g/dL` (LIME) or `Hemoglobin = 7.1 g/dL` (SHAP).
    pub condition: String,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Attribution<T: Scalar> {
    pub method: Method,
    pub outcome: String,
    pub base_value: T,
    pub prediction: T,
    /// Sorted by descending |value|; at most one entry per schema feature.
    pub contributions: Vec<Contribution<T>>,
    /// Weighted R² of the LIME surrogate on its own samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate_r2: Option<T>,
}

impl<T: Scalar> Attribution<T> {
    pub fn value_of(&self, feature: &str) -> Option<T> {
        self.contributions
            .iter()
            .find(|c| c.feature == feature)
            .map(|c| c.value)
    }

    /// Features in attribution order.
    pub fn ranking(&self) -> Vec<&str> {
        self.contributions.iter().map(|c| c.feature.as_str()).collect()
    }

    /// |top-k(self) ∩ top-k(other)| / k.
    pub fn top_k_overlap(&self, other: &Attribution<T>, k: usize) -> f64 {
        let a: Vec<&str> = self.ranking().into_iter().take(k).collect();
        let hits = other
            .ranking()
            .into_iter()
            .take(k)
            .filter(|f| a.contains(f))
            .count();
        hits as f64 / k.max(1) as f64
    }
}

/// Stable sort by descending magnitude; ties keep schema order.
pub(crate) fn sort_by_magnitude<T: Scalar>(contributions: &mut [Contribution<T>]) {
    contributions.sort_by(|a, b| {
        b.value
            .abs()
            .partial_cmp(&a.value.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}
