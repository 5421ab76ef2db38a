//! Random forest of CART trees for count regression and count
//! classification, with mean-decrease-impurity importance.

mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tree::{LeafValue, Samples, Tree, TreeNode};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeling::Dataset;
use crate::{Prediction, Task};

pub const FOREST_SCHEMA: &str = "hotspot.forest.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means the task default.
    pub mtry: Option<usize>,
    pub task: Task,
    pub seed: u64,
    /// Each tree sees a bootstrap resample when set, the full set otherwise.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            mtry: None,
            task: Task::Regression,
            seed: 42,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn for_task(task: Task) -> Self {
        ForestParams { task, ..Default::default() }
    }

    /// Every feature for regression, `ceil(sqrt(p))` for classification,
    /// unless set explicitly.
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| match self.task {
            Task::Regression => n_features,
            Task::Classification => (n_features as f64).sqrt().ceil() as usize,
        })
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        let mtry = self.resolved_mtry(n_features);
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParams("min_samples_split must be at least 2".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParams("max_depth must be positive".into()));
        }
        if mtry == 0 || mtry > n_features {
            return Err(Error::InvalidParams(format!("mtry {mtry} outside 1..={n_features}")));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for tree `index`; depends only on `(seed, index)`.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub schema: String,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    /// Label vocabulary (classification); empty for regression.
    pub classes: Vec<u32>,
    pub n_train: usize,
    pub trees: Vec<Tree>,
}

fn vocabulary(targets: &[u32]) -> Vec<u32> {
    let mut v = targets.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Grows one tree on every sample of `data` (no resampling).
pub fn train_tree<R: Rng>(data: Samples<'_>, params: &ForestParams, rng: &mut R) -> Result<Tree> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.validate(data.n_features)?;
    let classes = vocabulary(data.targets);
    Ok(tree::grow(data, (0..data.len()).collect(), &classes, grow_params(params, data.n_features), rng))
}

fn grow_params(params: &ForestParams, n_features: usize) -> tree::GrowParams {
    tree::GrowParams {
        task: params.task,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        mtry: params.resolved_mtry(n_features),
    }
}

pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<Forest> {
    train_forest_with(data, params, Exec::default())
}

/// Trains `n_trees` trees, each on its own bootstrap resample drawn from
/// [`tree_rng`]. The result does not depend on `exec`.
pub fn train_forest_with(data: &Dataset, params: &ForestParams, exec: Exec) -> Result<Forest> {
    let samples = Samples::new(&data.x, data.n_features(), &data.targets);
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.validate(samples.n_features)?;
    let classes = vocabulary(&data.targets);
    let grow = grow_params(params, samples.n_features);
    let n = samples.len();
    let trees = exec.map_range(params.n_trees, |t| {
        let mut rng = tree_rng(params.seed, t);
        let indices: Vec<usize> =
            if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        tree::grow(samples, indices, &classes, grow, &mut rng)
    });
    Ok(Forest {
        schema: FOREST_SCHEMA.to_string(),
        params: params.clone(),
        feature_names: data.feature_names.clone(),
        classes: if params.task == Task::Classification { classes } else { Vec::new() },
        n_train: n,
        trees,
    })
}

impl Forest {
    /// Mean of tree leaf values (regression) or plurality of tree labels,
    /// smallest label on ties (classification).
    pub fn predict(&self, row: &[f64]) -> Prediction {
        match self.params.task {
            Task::Regression => {
                let sum: f64 = self
                    .trees
                    .iter()
                    .map(|t| match t.leaf(row) {
                        LeafValue::Mean(v) => *v,
                        LeafValue::Histogram(_) => unreachable!("regression tree with a histogram leaf"),
                    })
                    .sum();
                Prediction::Value(sum / self.trees.len() as f64)
            }
            Task::Classification => {
                let mut votes: Vec<(u32, u32)> = Vec::new();
                for t in &self.trees {
                    let label = t.leaf(row).majority().expect("classification leaf");
                    match votes.binary_search_by_key(&label, |v| v.0) {
                        Ok(k) => votes[k].1 += 1,
                        Err(k) => votes.insert(k, (label, 1)),
                    }
                }
                Prediction::Label(LeafValue::Histogram(votes).majority().expect("at least one tree"))
            }
        }
    }

    pub fn predict_batch(&self, data: &Dataset, exec: Exec) -> Vec<Prediction> {
        exec.map_range(data.len(), |i| self.predict(data.row(i)))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Forest> {
        let f: Forest = serde_json::from_slice(bytes)?;
        if f.schema != FOREST_SCHEMA {
            return Err(Error::Artifact(format!("unsupported forest schema `{}`", f.schema)));
        }
        if f.trees.len() != f.params.n_trees {
            return Err(Error::Artifact("tree count does not match params".into()));
        }
        Ok(f)
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(crate::digest_hex(&self.to_json()?))
    }
}

/// Normalized importances plus the ranking they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
    /// Feature names by descending importance; ties keep feature order.
    pub ranking: Vec<String>,
}

impl ImportanceReport {
    pub fn from_importances(feature_names: Vec<String>, importances: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..importances.len()).collect();
        order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
        let ranking = order.iter().map(|&i| feature_names[i].clone()).collect();
        ImportanceReport { feature_names, importances, ranking }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.feature_names.iter().position(|n| n == name).map(|i| self.importances[i])
    }
}

/// Sum over split nodes of `(n_node / n_root) * impurity_decrease`, per
/// feature, averaged over trees and normalized to sum to one.
pub fn mdi_importance(forest: &Forest) -> Result<ImportanceReport> {
    let p = forest.feature_names.len();
    let mut acc = vec![0.0; p];
    for t in &forest.trees {
        let n_root = match t.root() {
            TreeNode::Leaf { n_samples, .. } | TreeNode::Split { n_samples, .. } => *n_samples as f64,
        };
        for node in &t.nodes {
            if let TreeNode::Split { feature, impurity_decrease, n_samples, .. } = node {
                acc[*feature] += *n_samples as f64 / n_root * impurity_decrease;
            }
        }
    }
    let n_trees = forest.trees.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n_trees);
    let total: f64 = acc.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::NoSplits);
    }
    let importances = acc.iter().map(|v| v / total).collect();
    Ok(ImportanceReport::from_importances(forest.feature_names.clone(), importances))
}

#[cfg(test)]
mod tests;
