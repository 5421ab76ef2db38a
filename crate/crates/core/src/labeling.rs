//! Per-cell accident counts and the supervised dataset built from them.

use std::io::{Read, Write};

use chrono::{Datelike, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::JoinedRecord;
use crate::geo::{cell_of, GeoPoint, GridCellId, GridSpec};

/// Canonical feature order. Importance reports and model artifacts index
/// into this.
pub const FEATURE_NAMES: [&str; 13] = [
    "longitude",
    "latitude",
    "speed_limit",
    "year",
    "month",
    "workday",
    "hour",
    "temperature",
    "humidity",
    "pressure",
    "wind",
    "solar_radiation",
    "rain",
];

pub const TARGET_NAME: &str = "target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub grid: GridSpec,
    /// Row-major, `grid.rows() * grid.cols()` entries.
    pub counts: Vec<u32>,
}

impl CellCounts {
    pub fn get(&self, id: GridCellId) -> u32 {
        self.counts[self.grid.index(id)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn min_max(&self) -> (u32, u32) {
        let min = self.counts.iter().copied().min().unwrap_or(0);
        let max = self.counts.iter().copied().max().unwrap_or(0);
        (min, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub longitude: f64,
    pub latitude: f64,
    pub speed_limit: f64,
    pub year: f64,
    pub month: f64,
    pub workday: f64,
    pub hour: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub pressure: f64,
    pub wind: f64,
    pub solar_radiation: f64,
    pub rain: f64,
}

impl FeatureRow {
    pub fn from_joined(j: &JoinedRecord) -> Self {
        let (a, w) = (&j.accident, &j.weather);
        let workday = !matches!(a.timestamp.weekday(), Weekday::Sat | Weekday::Sun);
        FeatureRow {
            longitude: a.location.lon(),
            latitude: a.location.lat(),
            speed_limit: f64::from(a.speed_limit),
            year: f64::from(a.timestamp.year()),
            month: f64::from(a.timestamp.month()),
            workday: if workday { 1.0 } else { 0.0 },
            hour: f64::from(a.timestamp.hour()),
            temperature: w.temperature,
            humidity: w.humidity,
            pressure: w.pressure,
            wind: w.wind,
            solar_radiation: w.solar_radiation,
            rain: w.rain,
        }
    }

    pub fn to_array(&self) -> [f64; 13] {
        [
            self.longitude,
            self.latitude,
            self.speed_limit,
            self.year,
            self.month,
            self.workday,
            self.hour,
            self.temperature,
            self.humidity,
            self.pressure,
            self.wind,
            self.solar_radiation,
            self.rain,
        ]
    }

    pub fn from_array(v: [f64; 13]) -> Self {
        let [longitude, latitude, speed_limit, year, month, workday, hour, temperature, humidity, pressure, wind, solar_radiation, rain] =
            v;
        FeatureRow {
            longitude,
            latitude,
            speed_limit,
            year,
            month,
            workday,
            hour,
            temperature,
            humidity,
            pressure,
            wind,
            solar_radiation,
            rain,
        }
    }
}

/// Feature matrix with per-row cell-count targets.
///
/// Rows are stored row-major in `x`. The column set starts as the 13
/// canonical features and may shrink under ablation, so models always carry
/// the names they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Vec<f64>,
    pub targets: Vec<u32>,
    /// Cell of each row; kept even when location columns are dropped.
    pub cells: Vec<GridCellId>,
    pub grid: GridSpec,
}

impl Dataset {
    /// A dataset with no spatial meaning: every row sits in the single cell
    /// of a one-cell grid over the default study area.
    pub fn from_matrix(feature_names: Vec<String>, x: Vec<f64>, targets: Vec<u32>) -> Result<Dataset> {
        if x.len() != feature_names.len() * targets.len() {
            return Err(Error::InvalidParams("feature matrix does not match target count".into()));
        }
        let grid = GridSpec::new(crate::geo::BoundingBox::federal_district(), 1, 1)?;
        let cells = vec![GridCellId { row: 0, col: 0 }; targets.len()];
        Ok(Dataset { feature_names, x, targets, cells, grid })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.n_features().max(1))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, keep: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(self.len() * keep.len());
        for r in 0..self.len() {
            let row = self.row(r);
            x.extend(keep.iter().map(|&k| row[k]));
        }
        Dataset {
            feature_names: keep.iter().map(|&k| self.feature_names[k].clone()).collect(),
            x,
            targets: self.targets.clone(),
            cells: self.cells.clone(),
            grid: self.grid,
        }
    }

    /// Writes the 13 (or remaining) feature columns plus `target`. Numbers
    /// use the shortest decimal that round-trips.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(TARGET_NAME);
        out.write_record(&header)?;
        for (row, t) in self.rows().zip(&self.targets) {
            let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
            fields.push(t.to_string());
            out.write_record(&fields)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write_csv`]. Cells are
    /// recomputed from the `latitude`/`longitude` columns on `grid`.
    pub fn read_csv<R: Read>(input: R, grid: GridSpec) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        if names.last().map(String::as_str) != Some(TARGET_NAME) {
            return Err(Error::MalformedHeader { expected: format!("..., {TARGET_NAME}"), found: names.join(",") });
        }
        let feature_names: Vec<String> = names[..names.len() - 1].to_vec();
        let pos = |n: &str| feature_names.iter().position(|f| f == n);
        let (Some(lat_i), Some(lon_i)) = (pos("latitude"), pos("longitude")) else {
            return Err(Error::Artifact("dataset file needs latitude and longitude columns".into()));
        };
        let p = feature_names.len();
        let mut x = Vec::new();
        let mut targets = Vec::new();
        let mut cells = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::Artifact(format!("dataset row {line} has {} fields", rec.len())));
            }
            let start = x.len();
            for f in rec.iter().take(p) {
                x.push(f.parse::<f64>().map_err(|_| Error::Artifact(format!("dataset row {line}: bad number `{f}`")))?);
            }
            let t = rec[p].parse::<u32>().map_err(|_| Error::Artifact(format!("dataset row {line}: bad target")))?;
            let loc = GeoPoint::new(x[start + lat_i], x[start + lon_i])?;
            cells.push(cell_of(loc, &grid)?);
            targets.push(t);
        }
        Ok(Dataset { feature_names, x, targets, cells, grid })
    }
}

/// Number of records in each cell.
pub fn count_per_cell(records: &[JoinedRecord], grid: &GridSpec) -> Result<CellCounts> {
    let mut counts = vec![0u32; grid.cell_count()];
    for r in records {
        let id = cell_of(r.accident.location, grid)?;
        counts[grid.index(id)] += 1;
    }
    Ok(CellCounts { grid: *grid, counts })
}

/// One row per record in canonical feature order; each target is the count
/// of the record's cell within `records`.
pub fn build_dataset(records: &[JoinedRecord], grid: &GridSpec) -> Result<Dataset> {
    let counts = count_per_cell(records, grid)?;
    let mut x = Vec::with_capacity(records.len() * FEATURE_NAMES.len());
    let mut targets = Vec::with_capacity(records.len());
    let mut cells = Vec::with_capacity(records.len());
    for r in records {
        let id = cell_of(r.accident.location, grid)?;
        x.extend_from_slice(&FeatureRow::from_joined(r).to_array());
        targets.push(counts.get(id));
        cells.push(id);
    }
    Ok(Dataset {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        x,
        targets,
        cells,
        grid: *grid,
    })
}

/// Records whose accident happened in `year`.
pub fn records_in_year(records: &[JoinedRecord], year: i32) -> Vec<JoinedRecord> {
    records.iter().filter(|r| r.accident.timestamp.year() == year).cloned().collect()
}
