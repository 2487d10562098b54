//! Multi-output Gini decision trees over the encoded matrix.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{from_usize, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum Node<T: Scalar> {
    /// Rows with `x[column] <= threshold` go left.
    Split {
        column: usize,
        threshold: T,
        left: usize,
        right: usize,
        cover: usize,
    },
    /// One positive-rate per outcome.
    Leaf { values: Vec<T>, cover: usize },
}

impl<T: Scalar> Node<T> {
    pub fn cover(&self) -> usize {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// Nodes in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecisionTree<T: Scalar> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    /// A tree that is a single leaf.
    pub fn leaf(values: Vec<T>, cover: usize) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { values, cover }],
        }
    }

    pub fn leaf_values(&self, row: &[T]) -> &[T] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    column,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*column] <= *threshold { *left } else { *right },
                Node::Leaf { values, .. } => return values,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T: Scalar>(t: &DecisionTree<T>, i: usize) -> usize {
            match t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn uses_column(&self, col: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { column, .. } if *column == col))
    }

    /// Structural checks: children in range and strictly after their parent
    /// (so the graph is acyclic with a single root), every node reached
    /// once, leaf values in [0, 1], covers ≥ 1 and additive over children.
    pub fn check(&self, n_columns: usize, n_outcomes: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut reached = vec![false; self.nodes.len()];
        reached[0] = true;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.cover() == 0 {
                return Err(format!("node {i} has zero cover"));
            }
            match node {
                Node::Split {
                    column, left, right, ..
                } => {
                    if *column >= n_columns {
                        return Err(format!("node {i} splits on unknown column {column}"));
                    }
                    for &c in [left, right] {
                        if c <= i || c >= self.nodes.len() || reached[c] {
                            return Err(format!("node {i} has invalid child {c}"));
                        }
                        reached[c] = true;
                    }
                    if self.nodes[*left].cover() + self.nodes[*right].cover() != node.cover() {
                        return Err(format!("node {i} cover differs from its children's sum"));
                    }
                }
                Node::Leaf { values, .. } => {
                    if values.len() != n_outcomes
                        || values.iter().any(|v| !(*v >= T::zero() && *v <= T::one()))
                    {
                        return Err(format!("leaf {i} has invalid values"));
                    }
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err("unreachable nodes".into());
        }
        Ok(())
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
}

/// Training view shared by all trees: column-major encoded matrix and
/// row-major labels.
pub(crate) struct TrainingMatrix<'a, T> {
    pub columns: &'a [Vec<T>],
    pub labels: &'a [Vec<bool>],
    pub n_outcomes: usize,
}

/// Σ_k 2·pos_k·(n − pos_k)/n, i.e. n times the summed per-outcome Gini.
fn weighted_gini(pos: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    pos.iter()
        .map(|&p| 2.0 * p as f64 * (n - p) as f64 / nf)
        .sum()
}

pub(crate) fn grow<T: Scalar, R: Rng>(
    data: &TrainingMatrix<'_, T>,
    samples: Vec<usize>,
    params: &GrowParams,
    rng: &mut R,
) -> DecisionTree<T> {
    let mut tree = DecisionTree { nodes: Vec::new() };
    let mut sorted = Vec::with_capacity(samples.len());
    grow_node(data, samples, 0, params, rng, &mut tree, &mut sorted);
    tree
}

fn positives<T>(data: &TrainingMatrix<'_, T>, samples: &[usize]) -> Vec<usize> {
    let mut pos = vec![0usize; data.n_outcomes];
    for &s in samples {
        for (k, &l) in data.labels[s].iter().enumerate() {
            pos[k] += usize::from(l);
        }
    }
    pos
}

fn grow_node<T: Scalar, R: Rng>(
    data: &TrainingMatrix<'_, T>,
    samples: Vec<usize>,
    depth: usize,
    params: &GrowParams,
    rng: &mut R,
    tree: &mut DecisionTree<T>,
    scratch: &mut Vec<(T, usize)>,
) -> usize {
    let n = samples.len();
    let pos = positives(data, &samples);
    let id = tree.nodes.len();
    let make_leaf = |pos: &[usize]| Node::Leaf {
        values: pos
            .iter()
            .map(|&p| from_usize::<T>(p) / from_usize::<T>(n))
            .collect(),
        cover: n,
    };
    let parent_cost = weighted_gini(&pos, n);
    if depth >= params.max_depth || n < 2 * params.min_leaf || parent_cost == 0.0 {
        tree.nodes.push(make_leaf(&pos));
        return id;
    }

    let n_cols = data.columns.len();
    let mut candidates = index::sample(rng, n_cols, params.features_per_split.min(n_cols)).into_vec();
    candidates.sort_unstable();

    // (cost, column, threshold)
    let mut best: Option<(f64, usize, T)> = None;
    let mut left_pos = vec![0usize; data.n_outcomes];
    let mut right_pos = vec![0usize; data.n_outcomes];
    for &c in &candidates {
        let col = &data.columns[c];
        scratch.clear();
        scratch.extend(samples.iter().map(|&s| (col[s], s)));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite encoded values"));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        left_pos.iter_mut().for_each(|p| *p = 0);
        right_pos.copy_from_slice(&pos);
        for i in 0..n - 1 {
            let s = scratch[i].1;
            for (k, &l) in data.labels[s].iter().enumerate() {
                if l {
                    left_pos[k] += 1;
                    right_pos[k] -= 1;
                }
            }
            let n_left = i + 1;
            let (a, b) = (scratch[i].0, scratch[i + 1].0);
            if a == b || n_left < params.min_leaf || n - n_left < params.min_leaf {
                continue;
            }
            let cost = weighted_gini(&left_pos, n_left) + weighted_gini(&right_pos, n - n_left);
            if best.is_none_or(|(bc, _, _)| cost < bc) {
                let mut t = a + (b - a) / lit(2.0);
                if t >= b {
                    t = a;
                }
                best = Some((cost, c, t));
            }
        }
    }

    match best {
        Some((cost, column, threshold)) if cost < parent_cost => {
            let col = &data.columns[column];
            let (left, right): (Vec<usize>, Vec<usize>) =
                samples.iter().partition(|&&s| col[s] <= threshold);
            tree.nodes.push(Node::Split {
                column,
                threshold,
                left: 0,
                right: 0,
                cover: n,
            });
            let l = grow_node(data, left, depth + 1, params, rng, tree, scratch);
            let r = grow_node(data, right, depth + 1, params, rng, tree, scratch);
            if let Node::Split { left, right, .. } = &mut tree.nodes[id] {
                *left = l;
                *right = r;
            }
            id
        }
        _ => {
            tree.nodes.push(make_leaf(&pos));
            id
        }
    }
}
