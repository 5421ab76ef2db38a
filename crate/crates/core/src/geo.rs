//! Coordinates, great-circle distance and the rectangular study grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometers per degree of latitude on the mean-radius sphere.
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// A WGS84-style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    min: GeoPoint,
    max: GeoPoint,
}

impl BoundingBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self> {
        if min.lat < max.lat && min.lon < max.lon {
            Ok(BoundingBox { min, max })
        } else {
            Err(Error::InvalidBoundingBox)
        }
    }

    /// Convenience constructor from raw degrees.
    pub fn from_degrees(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        BoundingBox::new(GeoPoint::new(min_lat, min_lon)?, GeoPoint::new(max_lat, max_lon)?)
    }

    /// The study area used by default: the Federal District of Brazil.
    pub fn federal_district() -> Self {
        BoundingBox {
            min: GeoPoint { lat: -16.05, lon: -48.30 },
            max: GeoPoint { lat: -15.45, lon: -47.30 },
        }
    }

    pub fn min(&self) -> GeoPoint {
        self.min
    }

    pub fn max(&self) -> GeoPoint {
        self.max
    }

    pub fn lat_span(&self) -> f64 {
        self.max.lat - self.min.lat
    }

    pub fn lon_span(&self) -> f64 {
        self.max.lon - self.min.lon
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.min.lat + self.max.lat) / 2.0,
            lon: (self.min.lon + self.max.lon) / 2.0,
        }
    }

    /// Closed-box membership.
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min.lat && p.lat <= self.max.lat && p.lon >= self.min.lon && p.lon <= self.max.lon
    }

    /// Height and width in kilometers, scaling longitude by the cosine of
    /// the middle latitude.
    pub fn extent_km(&self) -> (f64, f64) {
        let mid = self.center().lat.to_radians();
        (self.lat_span() * KM_PER_DEGREE, self.lon_span() * KM_PER_DEGREE * mid.cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCellId {
    pub row: usize,
    pub col: usize,
}

/// A `rows x cols` partition of a bounding box into equal lat/lon steps.
/// Row 0 is the southern edge, column 0 the western edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    bbox: BoundingBox,
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidCellCount(rows * cols));
        }
        Ok(GridSpec { bbox, rows, cols })
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lat_step(&self) -> f64 {
        self.bbox.lat_span() / self.rows as f64
    }

    pub fn lon_step(&self) -> f64 {
        self.bbox.lon_span() / self.cols as f64
    }

    /// Row-major index of a cell.
    pub fn index(&self, id: GridCellId) -> usize {
        id.row * self.cols + id.col
    }

    pub fn cells(&self) -> impl Iterator<Item = GridCellId> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| GridCellId { row, col }))
    }

    /// Latitude of the southern edge of `row`; `row == rows` gives the
    /// northern edge of the box.
    pub fn row_edge(&self, row: usize) -> f64 {
        if row == self.rows {
            self.bbox.max.lat
        } else {
            self.bbox.min.lat + self.bbox.lat_span() * row as f64 / self.rows as f64
        }
    }

    /// Longitude of the western edge of `col`; `col == cols` gives the
    /// eastern edge of the box.
    pub fn col_edge(&self, col: usize) -> f64 {
        if col == self.cols {
            self.bbox.max.lon
        } else {
            self.bbox.min.lon + self.bbox.lon_span() * col as f64 / self.cols as f64
        }
    }

    /// The closed rectangle covered by a cell.
    pub fn cell_bounds(&self, id: GridCellId) -> BoundingBox {
        BoundingBox {
            min: GeoPoint { lat: self.row_edge(id.row), lon: self.col_edge(id.col) },
            max: GeoPoint { lat: self.row_edge(id.row + 1), lon: self.col_edge(id.col + 1) },
        }
    }

    /// Cell height and width in kilometers.
    pub fn cell_size_km(&self) -> (f64, f64) {
        let (h, w) = self.bbox.extent_km();
        (h / self.rows as f64, w / self.cols as f64)
    }
}

/// Cell of a point, with points on the northern or eastern edge clamped into
/// the last row or column.
pub fn cell_of(p: GeoPoint, grid: &GridSpec) -> Result<GridCellId> {
    if !grid.bbox.contains(p) {
        return Err(Error::OutsideGrid { lat: p.lat, lon: p.lon });
    }
    let row = axis_index(p.lat, grid.rows, |i| grid.row_edge(i));
    let col = axis_index(p.lon, grid.cols, |i| grid.col_edge(i));
    Ok(GridCellId { row, col })
}

// Arithmetic guess, then nudged so that the result agrees with the edge
// values returned by `row_edge`/`col_edge` even when division rounds.
fn axis_index(v: f64, n: usize, edge: impl Fn(usize) -> f64) -> usize {
    let lo = edge(0);
    let hi = edge(n);
    let guess = ((v - lo) / (hi - lo) * n as f64).floor();
    let mut i = if guess.is_finite() && guess > 0.0 { (guess as usize).min(n - 1) } else { 0 };
    while i > 0 && v < edge(i) {
        i -= 1;
    }
    while i + 1 < n && v >= edge(i + 1) {
        i += 1;
    }
    i
}

/// Shapes a grid with exactly `cell_count` cells over `bbox`.
///
/// Every factor pair `rows x cols` is scored by `|ln(cell_height_km /
/// cell_width_km)|`; the most nearly square cell wins. Equal scores prefer
/// more columns than rows.
pub fn make_grid(bbox: BoundingBox, cell_count: usize) -> Result<GridSpec> {
    if cell_count == 0 {
        return Err(Error::InvalidCellCount(0));
    }
    let (height, width) = bbox.extent_km();
    let mut best: Option<(f64, usize, usize)> = None;
    for rows in 1..=cell_count {
        if !cell_count.is_multiple_of(rows) {
            continue;
        }
        let cols = cell_count / rows;
        let score = ((height / rows as f64) / (width / cols as f64)).ln().abs();
        let better = match best {
            None => true,
            Some((s, _, best_cols)) => {
                let tie = (score - s).abs() <= 1e-12 * s.max(1.0);
                if tie {
                    cols > best_cols
                } else {
                    score < s
                }
            }
        };
        if better {
            best = Some((score, rows, cols));
        }
    }
    let (_, rows, cols) = best.expect("1 x cell_count is always a factor pair");
    GridSpec::new(bbox, rows, cols)
}
