//! Severe traffic-accident hotspot prediction.
//!
//! The crate covers the whole pipeline: cleaning accident and weather
//! exports, fusing every accident with the nearest station's hourly
//! observation, binning accidents into a rectangular grid, labeling each
//! accident with its cell count, and predicting those counts with a random
//! forest or a small multilayer perceptron trained on one year and scored on
//! the next.
//!
//! Data-parallel loops (tree training, batch prediction, weather joins and
//! grid sweeps) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iterators otherwise. Results are identical either way.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod forest;
pub mod fuse;
pub mod geo;
pub mod labeling;
pub mod mlp;
pub mod render;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use exec::Exec;
pub use geo::{BoundingBox, GeoPoint, GridCellId, GridSpec};

/// Whether per-cell counts are predicted as numbers or as class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" | "reg" => Ok(Task::Regression),
            "classification" | "class" | "clf" => Ok(Task::Classification),
            other => Err(Error::InvalidParams(format!("unknown task `{other}`"))),
        }
    }
}

/// A single model output: a real value for regression, a count label for
/// classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Value(f64),
    Label(u32),
}

impl Prediction {
    pub fn as_f64(self) -> f64 {
        match self {
            Prediction::Value(v) => v,
            Prediction::Label(l) => f64::from(l),
        }
    }
}

/// Lowercase hex SHA-256 of a byte slice. Used for model and report digests.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
