use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid bounding box: min must be strictly south-west of max")]
    InvalidBoundingBox,
    #[error("cell count must be at least 1, got {0}")]
    InvalidCellCount(usize),
    #[error("point (lat {lat}, lon {lon}) lies outside the grid")]
    OutsideGrid { lat: f64, lon: f64 },
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("no station has weather for accident {id} at {hour}")]
    NoWeatherAvailable { id: String, hour: String },
    #[error("no stations available")]
    NoStations,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every tree in the forest is a single leaf")]
    NoSplits,
    #[error("train and test datasets were built on different grids")]
    GridMismatch,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature set is empty")]
    EmptyFeatureSet,
    #[error("impossible synthetic configuration: {0}")]
    ImpossibleConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure came from the filesystem or the byte stream
    /// rather than from the content of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
