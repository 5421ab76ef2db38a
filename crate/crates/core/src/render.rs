//! SVG figures: accident scatter, per-cell count heatmap and importance bars.
//!
//! Every drawn element carries `data-*` attributes with the value it encodes
//! so that figures can be checked without rasterizing them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ImportanceReport;
use crate::geo::{BoundingBox, GeoPoint, GridSpec};
use crate::labeling::CellCounts;

pub const MIN_SIDE: u32 = 64;
const MARGIN: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub width: u32,
    pub height: u32,
    pub title: String,
}

impl Default for FigureSpec {
    fn default() -> Self {
        FigureSpec { width: 800, height: 600, title: String::new() }
    }
}

impl FigureSpec {
    pub fn new(width: u32, height: u32, title: impl Into<String>) -> Result<Self> {
        let s = FigureSpec { width, height, title: title.into() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return Err(Error::InvalidParams(format!(
                "figure must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn plot_area(&self) -> (f64, f64, f64, f64) {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let m = MARGIN.min(w / 8.0).min(h / 8.0);
        (m, m, w - 2.0 * m, h - 2.0 * m)
    }
}

/// Dark blue at 0 to yellow at 1; `t` is clamped.
pub fn color_ramp(t: f64) -> (u8, u8, u8) {
    const LO: (f64, f64, f64) = (8.0, 29.0, 88.0);
    const HI: (f64, f64, f64) = (255.0, 237.0, 0.0);
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (mix(LO.0, HI.0), mix(LO.1, HI.1), mix(LO.2, HI.2))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(spec: &FigureSpec, kind: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-figure="{kind}">"#,
        w = spec.width,
        h = spec.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, spec.width, spec.height);
    if !spec.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="16" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            spec.width / 2,
            escape(&spec.title)
        );
    }
    s
}

/// Maps geographic coordinates into the plot area, north up.
struct Projection {
    bbox: BoundingBox,
    area: (f64, f64, f64, f64),
}

impl Projection {
    fn x(&self, lon: f64) -> f64 {
        self.area.0 + (lon - self.bbox.min().lon()) / self.bbox.lon_span() * self.area.2
    }

    fn y(&self, lat: f64) -> f64 {
        self.area.1 + (self.bbox.max().lat() - lat) / self.bbox.lat_span() * self.area.3
    }
}

/// Accident locations, optionally with grid lines.
pub fn render_scatter(points: &[GeoPoint], bbox: BoundingBox, grid: Option<&GridSpec>, spec: &FigureSpec) -> Result<String> {
    spec.validate()?;
    let proj = Projection { bbox, area: spec.plot_area() };
    let mut s = open(spec, "scatter");
    let (ax, ay, aw, ah) = proj.area;
    let _ = writeln!(s, r#"<rect x="{ax:.2}" y="{ay:.2}" width="{aw:.2}" height="{ah:.2}" fill="none" stroke="black"/>"#);
    if let Some(g) = grid {
        for r in 1..g.rows() {
            let y = proj.y(g.row_edge(r));
            let _ = writeln!(
                s,
                r##"<line class="grid" x1="{ax:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-width="0.5"/>"##,
                ax + aw
            );
        }
        for c in 1..g.cols() {
            let x = proj.x(g.col_edge(c));
            let _ = writeln!(
                s,
                r##"<line class="grid" x1="{x:.2}" y1="{ay:.2}" x2="{x:.2}" y2="{:.2}" stroke="#999" stroke-width="0.5"/>"##,
                ay + ah
            );
        }
    }
    let fill = hex(color_ramp(0.0));
    for p in points.iter().filter(|p| bbox.contains(**p)) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{fill}" fill-opacity="0.6" data-lat="{}" data-lon="{}"/>"#,
            proj.x(p.lon()),
            proj.y(p.lat()),
            p.lat(),
            p.lon()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One rectangle per cell, colored by count relative to the maximum.
pub fn render_grid_heatmap(counts: &CellCounts, spec: &FigureSpec) -> Result<String> {
    spec.validate()?;
    let grid = &counts.grid;
    let proj = Projection { bbox: grid.bbox(), area: spec.plot_area() };
    let (_, max) = counts.min_max();
    let mut s = open(spec, "heatmap");
    for cell in grid.cells() {
        let b = grid.cell_bounds(cell);
        let (lo, hi) = (b.min(), b.max());
        let count = counts.get(cell);
        let t = if max == 0 { 0.0 } else { f64::from(count) / f64::from(max) };
        let (x0, x1) = (proj.x(lo.lon()), proj.x(hi.lon()));
        let (y0, y1) = (proj.y(hi.lat()), proj.y(lo.lat()));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white" stroke-width="0.5" data-row="{}" data-col="{}" data-count="{count}"/>"#,
            x1 - x0,
            y1 - y0,
            hex(color_ramp(t)),
            cell.row,
            cell.col
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Horizontal bars in ranking order, longest for the top feature.
pub fn render_importance(report: &ImportanceReport, spec: &FigureSpec) -> Result<String> {
    spec.validate()?;
    let (ax, ay, aw, ah) = spec.plot_area();
    let label_w = (aw * 0.3).min(140.0);
    let bar_area = aw - label_w;
    let n = report.ranking.len().max(1) as f64;
    let slot = ah / n;
    let top = report.importances.iter().copied().fold(0.0, f64::max);
    let mut s = open(spec, "importance");
    for (k, name) in report.ranking.iter().enumerate() {
        let v = report.get(name).unwrap_or(0.0);
        let w = if top > 0.0 { v / top * bar_area } else { 0.0 };
        let y = ay + k as f64 * slot;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="{:.1}">{}</text>"#,
            ax + label_w - 4.0,
            y + slot * 0.7,
            (slot * 0.6).min(12.0),
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{w:.4}" height="{:.2}" fill="{}" data-feature="{}" data-value="{v}"/>"#,
            ax + label_w,
            y + slot * 0.1,
            slot * 0.8,
            hex(color_ramp(if top > 0.0 { v / top } else { 0.0 })),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Binary PPM heatmap, `scale` pixels per cell, north up.
pub fn heatmap_ppm(counts: &CellCounts, scale: usize) -> Result<Vec<u8>> {
    if scale == 0 {
        return Err(Error::InvalidParams("scale must be positive".into()));
    }
    let grid = &counts.grid;
    let (w, h) = (grid.cols() * scale, grid.rows() * scale);
    let (_, max) = counts.min_max();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for py in 0..h {
        let row = grid.rows() - 1 - py / scale;
        for px in 0..w {
            let c = counts.get(crate::geo::GridCellId { row, col: px / scale });
            let t = if max == 0 { 0.0 } else { f64::from(c) / f64::from(max) };
            let (r, g, b) = color_ramp(t);
            out.extend([r, g, b]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{make_grid, GridCellId};

    fn attr<'a>(elem: &'a str, name: &str) -> Option<&'a str> {
        let key = format!(" {name}=\"");
        let start = elem.find(&key)? + key.len();
        Some(&elem[start..start + elem[start..].find('"')?])
    }

    fn counts() -> CellCounts {
        let grid = make_grid(BoundingBox::federal_district(), 20).unwrap();
        let counts = (0..20).map(|i| (i * 7 % 11) as u32).collect();
        CellCounts { grid, counts }
    }

    #[test]
    fn ramp_endpoints_and_monotone_brightness() {
        assert_eq!(color_ramp(0.0), (8, 29, 88));
        assert_eq!(color_ramp(1.0), (255, 237, 0));
        assert_eq!(color_ramp(-3.0), color_ramp(0.0));
        let lum = |(r, g, b): (u8, u8, u8)| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
        let mut prev = lum(color_ramp(0.0));
        for k in 1..=100 {
            let l = lum(color_ramp(k as f64 / 100.0));
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn heatmap_cells_encode_counts() {
        let c = counts();
        let svg = render_grid_heatmap(&c, &FigureSpec::default()).unwrap();
        let rects: Vec<&str> = svg.lines().filter(|l| l.contains("data-count")).collect();
        assert_eq!(rects.len(), 20);
        let (_, max) = c.min_max();
        for r in rects {
            let row: usize = attr(r, "data-row").unwrap().parse().unwrap();
            let col: usize = attr(r, "data-col").unwrap().parse().unwrap();
            let n: u32 = attr(r, "data-count").unwrap().parse().unwrap();
            assert_eq!(n, c.get(GridCellId { row, col }));
            assert_eq!(attr(r, "fill").unwrap(), hex(color_ramp(f64::from(n) / f64::from(max))));
        }
    }

    #[test]
    fn scatter_keeps_every_point() {
        let bbox = BoundingBox::federal_district();
        let pts: Vec<GeoPoint> = (0..50).map(|i| GeoPoint::new(-16.0 + i as f64 * 0.01, -48.0).unwrap()).collect();
        let grid = make_grid(bbox, 20).unwrap();
        let svg = render_scatter(&pts, bbox, Some(&grid), &FigureSpec::new(200, 150, "a < b").unwrap()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 50);
        assert_eq!(svg.matches("class=\"grid\"").count(), grid.rows() - 1 + grid.cols() - 1);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn importance_bars_follow_values() {
        let rep = ImportanceReport::from_importances(vec!["a".into(), "b".into(), "c".into()], vec![0.2, 0.5, 0.3]);
        let svg = render_importance(&rep, &FigureSpec::default()).unwrap();
        let bars: Vec<&str> = svg.lines().filter(|l| l.contains("data-feature")).collect();
        let names: Vec<&str> = bars.iter().map(|b| attr(b, "data-feature").unwrap()).collect();
        assert_eq!(names, ["b", "c", "a"]);
        let widths: Vec<f64> = bars.iter().map(|b| attr(b, "width").unwrap().parse().unwrap()).collect();
        assert!((widths[1] / widths[0] - 0.6).abs() < 1e-3);
        assert!((widths[2] / widths[0] - 0.4).abs() < 1e-3);
    }

    #[test]
    fn rejects_tiny_figures() {
        assert!(matches!(FigureSpec::new(63, 100, ""), Err(Error::InvalidParams(_))));
        let tiny = FigureSpec { width: 10, height: 10, title: String::new() };
        assert!(render_grid_heatmap(&counts(), &tiny).is_err());
    }

    #[test]
    fn ppm_has_expected_size_and_north_up() {
        let c = counts();
        let ppm = heatmap_ppm(&c, 3).unwrap();
        let header = format!("P6\n{} {}\n255\n", c.grid.cols() * 3, c.grid.rows() * 3);
        assert!(ppm.starts_with(header.as_bytes()));
        assert_eq!(ppm.len(), header.len() + c.grid.cols() * 3 * c.grid.rows() * 3 * 3);
        // First pixel is the north-west cell.
        let top = GridCellId { row: c.grid.rows() - 1, col: 0 };
        let (_, max) = c.min_max();
        let (r, g, b) = color_ramp(f64::from(c.get(top)) / f64::from(max));
        assert_eq!(&ppm[header.len()..header.len() + 3], &[r, g, b]);
    }
}
