use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hotspot_core::eval::{ModelKind, ModelParams};
use hotspot_core::forest::ForestParams;
use hotspot_core::mlp::MlpConfig;
use hotspot_core::{BoundingBox, Task};

#[derive(Debug, Parser)]
#[command(name = "hotspot", version, about = "Predict per-cell accident counts from accident and weather records")]
pub struct Cli {
    /// TOML file setting flag defaults. Top-level keys apply to every
    /// command that has the flag; `[command]` tables apply to one command.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded synthetic accidents and hourly weather.
    Synth(SynthArgs),
    /// Validate raw CSVs and write the cleaned files plus reject logs.
    Ingest(IngestArgs),
    /// Attach nearest-station weather to each accident.
    Join(JoinArgs),
    /// Bin joined records into a grid and write per-year datasets.
    Grid(GridArgs),
    /// Train a model on a dataset file.
    Train(TrainArgs),
    /// Score a trained model on a dataset file.
    Eval(EvalArgs),
    /// Ingest, join, grid, train and evaluate in one go.
    Pipeline(PipelineArgs),
    /// Year-split evaluation with some features removed.
    Ablate(AblateArgs),
    /// Year-split evaluation at several grid resolutions.
    Sweep(SweepArgs),
    /// Mean-decrease-impurity importance of a trained forest.
    Importance(ImportanceArgs),
    /// Draw a scatter, heatmap or importance figure as SVG.
    Render(RenderArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Join(_) => "join",
            Command::Grid(_) => "grid",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Pipeline(_) => "pipeline",
            Command::Ablate(_) => "ablate",
            Command::Sweep(_) => "sweep",
            Command::Importance(_) => "importance",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = "HOTSPOT_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
}

fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}` in bounding box")))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = v[..] else {
        return Err("expected min_lat,min_lon,max_lat,max_lon".into());
    };
    BoundingBox::from_degrees(a, b, c, d).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct BboxArg {
    /// Study area as min_lat,min_lon,max_lat,max_lon. Defaults to the
    /// Federal District box.
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    pub bbox: Option<BoundingBox>,
}

impl BboxArg {
    pub fn get(&self) -> BoundingBox {
        self.bbox.unwrap_or_else(BoundingBox::federal_district)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1900)]
    pub n_per_year: usize,
    /// Distinct crash sites; 0 gives every accident its own location.
    #[arg(long, default_value_t = 400)]
    pub n_sites: usize,
    #[arg(long, default_value_t = 0.10)]
    pub uniform_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub year_drift_km: f64,
    /// Share of second-year accidents at a first-year site.
    #[arg(long, default_value_t = 1.0)]
    pub recurrence: f64,
    #[arg(long, default_value_t = 0.0)]
    pub site_jitter_km: f64,
    #[arg(long, default_value_t = 5)]
    pub n_stations: usize,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2020, 2021])]
    pub years: Vec<i32>,
    #[command(flatten)]
    pub bbox: BboxArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub accidents: PathBuf,
    #[arg(long)]
    pub weather: PathBuf,
    /// Keep only accidents in these years (first,last).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub years: Option<Vec<i32>>,
    #[command(flatten)]
    pub bbox: BboxArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct OffsetArg {
    /// Hours added to each accident time before the weather lookup.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub time_offset_hours: i64,
}

#[derive(Debug, Clone, Args)]
pub struct JoinArgs {
    /// Cleaned accidents CSV.
    #[arg(long)]
    pub accidents: PathBuf,
    /// Cleaned weather CSV.
    #[arg(long)]
    pub weather: PathBuf,
    #[command(flatten)]
    pub offset: OffsetArg,
    #[command(flatten)]
    pub bbox: BboxArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct YearsArg {
    #[arg(long, default_value_t = 2020)]
    pub train_year: i32,
    #[arg(long, default_value_t = 2021)]
    pub test_year: i32,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Joined CSV from `join`.
    #[arg(long)]
    pub joined: PathBuf,
    #[arg(long, default_value_t = 80)]
    pub cells: usize,
    #[command(flatten)]
    pub years: YearsArg,
    #[command(flatten)]
    pub bbox: BboxArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Rf,
    Mlp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Rf => ModelKind::Rf,
            ModelArg::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Rf)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Forest size.
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub min_samples_split: usize,
    /// Features tried per split; defaults to all (regression) or sqrt (classification).
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Train every tree on the full training set.
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_values_t = [21, 21, 21])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

impl ModelArgs {
    pub fn kind(&self) -> ModelKind {
        self.model.into()
    }

    pub fn task(&self) -> Task {
        self.task.into()
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            forest: ForestParams {
                n_trees: self.trees,
                max_depth: self.max_depth,
                min_samples_split: self.min_samples_split,
                mtry: self.mtry,
                task: self.task(),
                seed: self.seed,
                bootstrap: !self.no_bootstrap,
            },
            mlp: MlpConfig {
                hidden_layers: self.hidden.clone(),
                task: self.task(),
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Grid file written by `grid`.
    #[arg(long)]
    pub grid: PathBuf,
    /// Feature columns to leave out.
    #[arg(long, value_delimiter = ',')]
    pub drop: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

/// Raw inputs for the end-to-end commands. Without files, the default
/// synthetic data for `--seed` is generated in memory.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long, requires = "weather")]
    pub accidents: Option<PathBuf>,
    #[arg(long, requires = "accidents")]
    pub weather: Option<PathBuf>,
    #[command(flatten)]
    pub offset: OffsetArg,
    #[command(flatten)]
    pub years: YearsArg,
    #[command(flatten)]
    pub bbox: BboxArg,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 80)]
    pub cells: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 80)]
    pub cells: usize,
    /// Feature columns to remove.
    #[arg(long, value_delimiter = ',', default_values_t = ["latitude".to_string(), "longitude".to_string()])]
    pub drop: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Strictly increasing cell counts.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 80, 320])]
    pub cells: Vec<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct ImportanceArgs {
    /// Forest model file.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureKind {
    Scatter,
    Heatmap,
    Importance,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long, value_enum)]
    pub kind: FigureKind,
    /// Accidents CSV (scatter).
    #[arg(long)]
    pub accidents: Option<PathBuf>,
    /// Joined CSV (heatmap).
    #[arg(long)]
    pub joined: Option<PathBuf>,
    /// Importance JSON (importance).
    #[arg(long)]
    pub importance: Option<PathBuf>,
    /// Restrict scatter and heatmap to one year.
    #[arg(long)]
    pub year: Option<i32>,
    /// Grid lines (scatter) or cells (heatmap).
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 600)]
    pub height: u32,
    #[arg(long, default_value = "")]
    pub title: String,
    /// Also write a PPM raster of the heatmap.
    #[arg(long)]
    pub ppm: bool,
    #[command(flatten)]
    pub bbox: BboxArg,
    #[command(flatten)]
    pub out: OutArg,
}
