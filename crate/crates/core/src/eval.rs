//! Year-split evaluation, feature ablation and grid-resolution sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{self, Forest, ForestParams};
use crate::fuse::JoinedRecord;
use crate::geo::{make_grid, BoundingBox};
use crate::labeling::{build_dataset, Dataset};
use crate::mlp::{self, MlpConfig, MlpParams};
use crate::{Prediction, Task};

pub const MODEL_SCHEMA: &str = "hotspot.model.v1";

/// Headline metric definition, carried in every report.
pub const HIT_RATE_DEFINITION: &str = "fraction of test rows whose prediction equals the true cell count; \
regression predictions are rounded half away from zero, classification labels must match exactly";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Mlp,
}

impl ModelKind {
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rf => "Random Forest",
            ModelKind::Mlp => "Multilayer Perceptron",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" | "forest" | "random-forest" => Ok(ModelKind::Rf),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidParams(format!("unknown model `{other}`"))),
        }
    }
}

/// Hyperparameters for either model family. The task and seed passed to
/// the evaluation entry points override the ones stored here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    pub forest: ForestParams,
    pub mlp: MlpConfig,
}

impl ModelParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.forest.seed = seed;
        self.mlp.seed = seed;
        self
    }
}

/// A trained model of either family, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Model {
    Rf(Forest),
    Mlp(MlpParams),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Rf(_) => ModelKind::Rf,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Rf(f) => f.params.task,
            Model::Mlp(m) => m.config.task,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Model::Rf(f) => &f.feature_names,
            Model::Mlp(m) => &m.feature_names,
        }
    }

    pub fn n_train(&self) -> usize {
        match self {
            Model::Rf(f) => f.n_train,
            Model::Mlp(m) => m.n_train,
        }
    }

    pub fn predict(&self, row: &[f64]) -> Prediction {
        match self {
            Model::Rf(f) => f.predict(row),
            Model::Mlp(m) => m.forward(row),
        }
    }

    /// Labels the model can emit; `None` for regression.
    pub fn label_vocabulary(&self) -> Option<&[u32]> {
        match (self, self.task()) {
            (_, Task::Regression) => None,
            (Model::Rf(f), _) => Some(&f.classes),
            (Model::Mlp(m), _) => Some(&m.labels),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = ModelFile { schema: MODEL_SCHEMA.into(), model: self.clone() };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Model> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        if file.schema != MODEL_SCHEMA {
            return Err(Error::Artifact(format!("unsupported model schema `{}`", file.schema)));
        }
        // Re-run the family-specific checks.
        Ok(match file.model {
            Model::Rf(f) => Model::Rf(Forest::from_json(&serde_json::to_vec(&f)?)?),
            Model::Mlp(m) => Model::Mlp(MlpParams::from_json(&serde_json::to_vec(&m)?)?),
        })
    }

    pub fn digest(&self) -> Result<String> {
        Ok(crate::digest_hex(&self.to_json()?))
    }
}

pub fn train_model(train: &Dataset, kind: ModelKind, task: Task, params: &ModelParams, exec: Exec) -> Result<Model> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.n_features() == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    Ok(match kind {
        ModelKind::Rf => {
            let p = ForestParams { task, ..params.forest.clone() };
            Model::Rf(forest::train_forest_with(train, &p, exec)?)
        }
        ModelKind::Mlp => {
            let c = MlpConfig { task, ..params.mlp.clone() };
            Model::Mlp(mlp::train(train, &c)?)
        }
    })
}

/// Per-cell breakdown of test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub row: usize,
    pub col: usize,
    pub true_count: u32,
    pub rows: usize,
    pub hits: usize,
    pub mean_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub task: Task,
    pub cell_count: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub features: Vec<String>,
    pub hits: usize,
    pub hit_rate: f64,
    pub hit_rate_definition: String,
    pub mae: f64,
    pub rmse: f64,
    /// Regression only.
    pub r2: Option<f64>,
    /// Classification only: test rows whose true count never occurred in
    /// training and so cannot be predicted.
    pub unseen_label_rows: Option<usize>,
    /// Set when location columns are inputs while targets are per-cell
    /// counts, so the target is a function of the inputs.
    pub leakage_note: bool,
    pub model_digest: String,
    pub cells: Vec<CellSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Whether a prediction counts as a hit for `target`.
pub fn is_hit(prediction: Prediction, target: u32) -> bool {
    match prediction {
        Prediction::Value(v) => v.round() == f64::from(target),
        Prediction::Label(l) => l == target,
    }
}

/// Scores a trained model on `test`.
pub fn evaluate(model: &Model, test: &Dataset, exec: Exec) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.feature_names() != test.feature_names.as_slice() {
        return Err(Error::Artifact(format!(
            "model features [{}] do not match test features [{}]",
            model.feature_names().join(","),
            test.feature_names.join(",")
        )));
    }
    let predictions = exec.map_range(test.len(), |i| model.predict(test.row(i)));
    let n = test.len() as f64;
    let mut hits = 0;
    let (mut abs, mut sq) = (0.0, 0.0);
    let mut per_cell: BTreeMap<(usize, usize), CellSummary> = BTreeMap::new();
    for ((&pred, &y), cell) in predictions.iter().zip(&test.targets).zip(&test.cells) {
        let hit = is_hit(pred, y);
        hits += usize::from(hit);
        let err = pred.as_f64() - f64::from(y);
        abs += err.abs();
        sq += err * err;
        let s = per_cell.entry((cell.row, cell.col)).or_insert(CellSummary {
            row: cell.row,
            col: cell.col,
            true_count: y,
            rows: 0,
            hits: 0,
            mean_prediction: 0.0,
        });
        s.rows += 1;
        s.hits += usize::from(hit);
        s.mean_prediction += pred.as_f64();
    }
    let cells = per_cell
        .into_values()
        .map(|mut s| {
            s.mean_prediction /= s.rows as f64;
            s
        })
        .collect();
    let r2 = match model.task() {
        Task::Regression => {
            let mean = test.targets.iter().map(|&t| f64::from(t)).sum::<f64>() / n;
            let ss_tot: f64 = test.targets.iter().map(|&t| (f64::from(t) - mean).powi(2)).sum();
            // Constant targets: perfect predictions score 1, anything else 0.
            Some(if ss_tot > 0.0 {
                1.0 - sq / ss_tot
            } else if sq == 0.0 {
                1.0
            } else {
                0.0
            })
        }
        Task::Classification => None,
    };
    let unseen_label_rows = model
        .label_vocabulary()
        .map(|vocab| test.targets.iter().filter(|t| vocab.binary_search(t).is_err()).count());
    let features = test.feature_names.clone();
    let leakage_note = features.iter().any(|f| f == "latitude" || f == "longitude");
    Ok(EvalReport {
        model: model.kind(),
        task: model.task(),
        cell_count: test.grid.cell_count(),
        grid_rows: test.grid.rows(),
        grid_cols: test.grid.cols(),
        train_size: model.n_train(),
        test_size: test.len(),
        features,
        hits,
        hit_rate: hits as f64 / n,
        hit_rate_definition: HIT_RATE_DEFINITION.to_string(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2,
        unseen_label_rows,
        leakage_note,
        model_digest: model.digest()?,
        cells,
    })
}

fn check_pair(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.grid != test.grid {
        return Err(Error::GridMismatch);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.feature_names != test.feature_names {
        return Err(Error::Artifact("train and test feature columns differ".into()));
    }
    Ok(())
}

/// Trains on one year's dataset and scores on another's.
pub fn year_split_eval(
    train: &Dataset,
    test: &Dataset,
    kind: ModelKind,
    task: Task,
    params: &ModelParams,
    exec: Exec,
) -> Result<EvalReport> {
    check_pair(train, test)?;
    let model = train_model(train, kind, task, params, exec)?;
    evaluate(&model, test, exec)
}

/// Column indices left after dropping `drop` from `names`.
pub fn kept_columns(names: &[String], drop: &[String]) -> Result<Vec<usize>> {
    if let Some(bad) = drop.iter().find(|d| !names.contains(d)) {
        return Err(Error::UnknownFeature(bad.clone()));
    }
    let keep: Vec<usize> = (0..names.len()).filter(|&i| !drop.contains(&names[i])).collect();
    if keep.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    Ok(keep)
}

/// [`year_split_eval`] with the named columns removed from both splits.
pub fn ablate_features(
    train: &Dataset,
    test: &Dataset,
    drop: &[String],
    kind: ModelKind,
    task: Task,
    params: &ModelParams,
    exec: Exec,
) -> Result<EvalReport> {
    check_pair(train, test)?;
    let keep = kept_columns(&train.feature_names, drop)?;
    year_split_eval(&train.select(&keep), &test.select(&keep), kind, task, params, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub cell_count: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn hit_rates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.report.hit_rate).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Re-grids both years at each cell count and runs [`year_split_eval`].
#[allow(clippy::too_many_arguments)]
pub fn grid_sweep(
    first: &[JoinedRecord],
    second: &[JoinedRecord],
    bbox: BoundingBox,
    cell_counts: &[usize],
    kind: ModelKind,
    task: Task,
    params: &ModelParams,
    exec: Exec,
) -> Result<SweepReport> {
    if let Some(&bad) = cell_counts.iter().find(|&&c| c == 0) {
        return Err(Error::InvalidCellCount(bad));
    }
    if cell_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams("cell counts must be strictly increasing".into()));
    }
    let results = exec.map_slice(cell_counts, |&count| -> Result<SweepEntry> {
        let grid = make_grid(bbox, count)?;
        let train = build_dataset(first, &grid)?;
        let test = build_dataset(second, &grid)?;
        let report = year_split_eval(&train, &test, kind, task, params, exec)?;
        Ok(SweepEntry { cell_count: count, report })
    });
    Ok(SweepReport { entries: results.into_iter().collect::<Result<_>>()? })
}

/// Fixed-width `Model | Type | Accuracy` table.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:<16} {:>9}", "Model", "Type", "Accuracy");
    let _ = writeln!(out, "{:-<24} {:-<16} {:->9}", "", "", "");
    for r in reports {
        let task = match r.task {
            Task::Regression => "Regression",
            Task::Classification => "Classification",
        };
        let _ = writeln!(out, "{:<24} {:<16} {:>7.1} %", r.model.display_name(), task, r.hit_rate * 100.0);
    }
    let _ = writeln!(out, "Accuracy = hit rate: {HIT_RATE_DEFINITION}.");
    if reports.iter().any(|r| r.leakage_note) {
        let _ = writeln!(
            out,
            "Note: latitude/longitude are inputs and targets are per-cell counts, so the target is a function of \
             the location; high accuracy reflects year-to-year hotspot stability."
        );
    }
    out
}
