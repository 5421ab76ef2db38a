//! Greedy CART growing on a sample multiset.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Task;

/// Borrowed training data: row-major features and integer targets.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
    pub targets: &'a [u32],
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a [f64], n_features: usize, targets: &'a [u32]) -> Self {
        assert_eq!(x.len(), n_features * targets.len(), "feature matrix does not match target count");
        Samples { x, n_features, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features + feature]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafValue {
    /// Mean training target.
    Mean(f64),
    /// `(label, count)` pairs sorted by label.
    Histogram(Vec<(u32, u32)>),
}

impl LeafValue {
    /// Most frequent label; the smallest label wins a tie.
    pub fn majority(&self) -> Option<u32> {
        match self {
            LeafValue::Mean(_) => None,
            LeafValue::Histogram(h) => {
                let mut best: Option<(u32, u32)> = None;
                for &(label, count) in h {
                    if best.is_none_or(|(_, c)| count > c) {
                        best = Some((label, count));
                    }
                }
                best.map(|(l, _)| l)
            }
        }
    }
}

/// Tree node stored in a flat arena; children are arena indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        n_samples: usize,
        value: LeafValue,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
        impurity_decrease: f64,
        n_samples: usize,
    },
}

/// A fitted tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Leaf reached by `row`.
    pub fn leaf(&self, row: &[f64]) -> &LeafValue {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn is_leaf_only(&self) -> bool {
        matches!(self.root(), TreeNode::Leaf { .. })
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

/// Settings that shape a single tree.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub task: Task,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub mtry: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Midpoint of two consecutive distinct values that always separates them.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

struct Grower<'a, R: Rng> {
    data: Samples<'a>,
    params: GrowParams,
    /// Dense class index per target, classification only.
    class_of: Vec<usize>,
    classes: &'a [u32],
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    order: Vec<(f64, usize)>,
}

/// Grows one tree on `indices` (a multiset; bootstrap duplicates allowed).
///
/// `classes` is the sorted label vocabulary for classification and is
/// ignored for regression.
pub(crate) fn grow<R: Rng>(data: Samples<'_>, indices: Vec<usize>, classes: &[u32], params: GrowParams, rng: &mut R) -> Tree {
    let class_of = match params.task {
        Task::Classification => data
            .targets
            .iter()
            .map(|t| classes.binary_search(t).expect("label vocabulary covers every target"))
            .collect(),
        Task::Regression => Vec::new(),
    };
    let mut g = Grower { data, params, class_of, classes, rng, nodes: Vec::new(), order: Vec::with_capacity(indices.len()) };
    g.build(indices, 0);
    Tree { nodes: g.nodes }
}

impl<R: Rng> Grower<'_, R> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { n_samples: 0, value: LeafValue::Mean(0.0) });
        let n = idx.len();
        let first = self.data.targets[idx[0]];
        let pure = idx.iter().all(|&i| self.data.targets[i] == first);
        let stop = pure || n < self.params.min_samples_split || self.params.max_depth.is_some_and(|d| depth >= d);
        let split = if stop { None } else { self.best_split(&idx) };
        match split {
            None => {
                self.nodes[id] = TreeNode::Leaf { n_samples: n, value: self.leaf_value(&idx) };
            }
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.data.value(i, s.feature) <= s.threshold);
                drop(idx);
                let l = self.build(left, depth + 1);
                let r = self.build(right, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: r,
                    impurity_decrease: s.decrease,
                    n_samples: n,
                };
            }
        }
        id
    }

    fn leaf_value(&self, idx: &[usize]) -> LeafValue {
        match self.params.task {
            Task::Regression => {
                let sum: f64 = idx.iter().map(|&i| f64::from(self.data.targets[i])).sum();
                LeafValue::Mean(sum / idx.len() as f64)
            }
            Task::Classification => {
                let mut counts = vec![0u32; self.classes.len()];
                for &i in idx {
                    counts[self.class_of[i]] += 1;
                }
                LeafValue::Histogram(
                    counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (self.classes[k], c)).collect(),
                )
            }
        }
    }

    /// Visits features in random order until `mtry` have been tried and at
    /// least one was not constant within the node. Equal decreases go to
    /// the lower feature index.
    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let p = self.data.n_features;
        let order = sample(&mut *self.rng, p, p);
        let mut best: Option<BestSplit> = None;
        let (mut visited, mut varying) = (0, 0);
        for f in order.iter() {
            if visited >= self.params.mtry && varying > 0 {
                break;
            }
            visited += 1;
            self.order.clear();
            self.order.extend(idx.iter().map(|&i| (self.data.value(i, f), i)));
            self.order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if self.order[0].0 == self.order[self.order.len() - 1].0 {
                continue;
            }
            varying += 1;
            let cand = match self.params.task {
                Task::Regression => scan_regression(&self.order, self.data.targets),
                Task::Classification => scan_gini(&self.order, &self.class_of, self.classes.len()),
            };
            if let Some((threshold, decrease)) = cand {
                let better = best.is_none_or(|b| decrease > b.decrease || (decrease == b.decrease && f < b.feature));
                if better {
                    best = Some(BestSplit { feature: f, threshold, decrease });
                }
            }
        }
        best
    }
}

/// Smallest decrease treated as an improvement, relative to the parent's
/// impurity. Below it a split is rounding noise.
const MIN_RELATIVE_DECREASE: f64 = 1e-12;

/// Best variance-reduction threshold over values sorted ascending.
/// Returns `(threshold, weighted decrease)`; the first threshold wins ties.
pub(crate) fn scan_regression(sorted: &[(f64, usize)], targets: &[u32]) -> Option<(f64, f64)> {
    let n = sorted.len();
    let nf = n as f64;
    let (mut total, mut total_sq) = (0.0, 0.0);
    for &(_, i) in sorted {
        let y = f64::from(targets[i]);
        total += y;
        total_sq += y * y;
    }
    let parent = (total_sq / nf - (total / nf).powi(2)).max(0.0);
    let floor = MIN_RELATIVE_DECREASE * parent;
    let mut best: Option<(f64, f64)> = None;
    let mut left = 0.0;
    for k in 0..n - 1 {
        left += f64::from(targets[sorted[k].1]);
        let (v, next) = (sorted[k].0, sorted[k + 1].0);
        if v >= next {
            continue;
        }
        let nl = (k + 1) as f64;
        let nr = nf - nl;
        let diff = left / nl - (total - left) / nr;
        // Parent variance minus the size-weighted child variances.
        let decrease = nl * nr / (nf * nf) * diff * diff;
        if decrease > floor && best.is_none_or(|(_, d)| decrease > d) {
            best = Some((midpoint(v, next), decrease));
        }
    }
    best
}

/// Best Gini-decrease threshold over values sorted ascending.
pub(crate) fn scan_gini(sorted: &[(f64, usize)], class_of: &[usize], n_classes: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let nf = n as f64;
    let mut right = vec![0u64; n_classes];
    for &(_, i) in sorted {
        right[class_of[i]] += 1;
    }
    let total_sq: u64 = right.iter().map(|c| c * c).sum();
    let parent = 1.0 - total_sq as f64 / (nf * nf);
    let floor = MIN_RELATIVE_DECREASE * parent;
    let mut left = vec![0u64; n_classes];
    let (mut sq_l, mut sq_r) = (0u64, total_sq);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let c = class_of[sorted[k].1];
        sq_l += 2 * left[c] + 1;
        sq_r -= 2 * right[c] - 1;
        left[c] += 1;
        right[c] -= 1;
        let (v, next) = (sorted[k].0, sorted[k + 1].0);
        if v >= next {
            continue;
        }
        let nl = (k + 1) as f64;
        let nr = nf - nl;
        // Gini(parent) - nl/n Gini(left) - nr/n Gini(right), expanded.
        let decrease = (sq_l as f64 / nl + sq_r as f64 / nr - total_sq as f64 / nf) / nf;
        if decrease > floor && best.is_none_or(|(_, d)| decrease > d) {
            best = Some((midpoint(v, next), decrease));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_separates_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        assert_eq!(midpoint(1.0, 2.0), 1.5);
    }

    #[test]
    fn gini_scan_on_separable_labels() {
        let sorted: Vec<(f64, usize)> = (0..6).map(|i| (i as f64, i)).collect();
        let class_of = [0, 0, 0, 1, 1, 1];
        let (thr, dec) = scan_gini(&sorted, &class_of, 2).unwrap();
        assert_eq!(thr, 2.5);
        assert!((dec - 0.5).abs() < 1e-15);
    }

    #[test]
    fn majority_breaks_ties_low() {
        assert_eq!(LeafValue::Histogram(vec![(2, 3), (5, 3), (9, 1)]).majority(), Some(2));
        assert_eq!(LeafValue::Histogram(vec![(2, 1), (5, 3)]).majority(), Some(5));
    }
}
