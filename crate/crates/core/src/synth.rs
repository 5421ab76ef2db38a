//! Synthetic accident and weather data for the Federal District box.
//!
//! Accidents cluster around satellite-city hotspots with a uniform
//! background. Within that mixture they happen at a fixed set of crash
//! sites, so most sites see several accidents a year. Each hotspot has one
//! posted speed limit. The second year
//! re-draws a `1 - recurrence` share of accidents from hotspot centers
//! shifted by up to `year_drift_km`; the rest recur at first-year sites,
//! displaced by at most `site_jitter_km`. Weather stations sit at fixed
//! sites with an altitude-dependent pressure baseline and report every
//! hour of both years.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{AccidentRecord, StationSeries, WeatherObservation};
use crate::error::{Error, Result};
use crate::forest::mix64;
use crate::geo::{BoundingBox, GeoPoint, KM_PER_DEGREE};

pub const SPEED_LIMITS: [u32; 3] = [40, 60, 80];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub name: String,
    pub center: GeoPoint,
    pub stddev_km: f64,
    pub weight: f64,
    pub speed_limit: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSite {
    pub id: String,
    pub location: GeoPoint,
    pub altitude_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub bbox: BoundingBox,
    pub hotspots: Vec<Hotspot>,
    /// Share of accidents drawn uniformly over the box.
    pub uniform_fraction: f64,
    pub n_per_year: usize,
    /// Distinct crash sites drawn from the mixture; each first-year accident
    /// picks one uniformly. Zero gives every accident its own location.
    pub n_sites: usize,
    /// Upper bound on how far a hotspot center moves between years.
    pub year_drift_km: f64,
    /// Share of second-year accidents at a first-year site.
    pub recurrence: f64,
    pub site_jitter_km: f64,
    pub n_stations: usize,
    pub seed: u64,
    pub years: [i32; 2],
}

fn hotspot(name: &str, lat: f64, lon: f64, stddev_km: f64, weight: f64, speed_limit: u32) -> Hotspot {
    Hotspot {
        name: name.into(),
        center: GeoPoint::new(lat, lon).expect("valid hotspot"),
        stddev_km,
        weight,
        speed_limit,
    }
}

pub fn default_hotspots() -> Vec<Hotspot> {
    vec![
        hotspot("Plano Piloto", -15.7942, -47.8822, 3.0, 0.22, 60),
        hotspot("Taguatinga", -15.8333, -48.0564, 2.0, 0.10, 60),
        hotspot("Ceilandia", -15.8194, -48.1083, 2.2, 0.10, 40),
        hotspot("Samambaia", -15.8761, -48.0858, 1.8, 0.06, 40),
        hotspot("Aguas Claras", -15.8400, -48.0261, 1.2, 0.05, 60),
        hotspot("Guara", -15.8236, -47.9800, 1.3, 0.05, 60),
        hotspot("Gama", -16.0167, -48.0667, 1.8, 0.05, 40),
        hotspot("Santa Maria", -16.0056, -47.9869, 1.5, 0.04, 80),
        hotspot("Recanto das Emas", -15.9067, -48.0611, 1.5, 0.04, 40),
        hotspot("Sobradinho", -15.6531, -47.7914, 1.8, 0.05, 80),
        hotspot("Planaltina", -15.6189, -47.6528, 2.0, 0.05, 80),
        hotspot("Sao Sebastiao", -15.9028, -47.7786, 1.5, 0.03, 60),
        hotspot("Paranoa", -15.7686, -47.7797, 1.2, 0.03, 40),
        hotspot("Brazlandia", -15.6800, -48.2000, 1.5, 0.03, 80),
    ]
}

/// Automatic station sites in the district, with altitudes.
pub fn default_station_sites() -> Vec<StationSite> {
    [
        ("A001", -15.7893, -47.9258, 1160.0),
        ("A042", -15.5997, -48.1311, 1143.0),
        ("A045", -15.5964, -47.6258, 1030.0),
        ("A046", -15.9352, -48.1374, 990.0),
        ("A047", -16.0123, -47.5574, 1043.0),
    ]
    .into_iter()
    .map(|(id, lat, lon, alt)| StationSite {
        id: id.into(),
        location: GeoPoint::new(lat, lon).expect("valid station"),
        altitude_m: alt,
    })
    .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bbox: BoundingBox::federal_district(),
            hotspots: default_hotspots(),
            uniform_fraction: 0.10,
            n_per_year: 1900,
            n_sites: 400,
            year_drift_km: 0.5,
            recurrence: 1.0,
            site_jitter_km: 0.0,
            n_stations: 5,
            seed: 42,
            years: [2020, 2021],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ImpossibleConfig(m.into()));
        if !(0.0..=1.0).contains(&self.uniform_fraction) {
            return bad("uniform_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.recurrence) {
            return bad("recurrence must lie in [0, 1]");
        }
        if self.hotspots.is_empty() && self.uniform_fraction < 1.0 {
            return bad("no hotspots and uniform_fraction below 1");
        }
        if !(self.year_drift_km >= 0.0 && self.site_jitter_km >= 0.0) {
            return bad("drift and jitter must be non-negative");
        }
        for h in &self.hotspots {
            if !(h.weight > 0.0 && h.weight.is_finite()) || !(h.stddev_km > 0.0 && h.stddev_km.is_finite()) {
                return bad(&format!("hotspot {} needs positive weight and spread", h.name));
            }
            if !self.bbox.contains(h.center) {
                return bad(&format!("hotspot {} lies outside the bounding box", h.name));
            }
        }
        if self.n_stations == 0 {
            return bad("at least one weather station is required");
        }
        if self.years[0] >= self.years[1] {
            return bad("years must be increasing");
        }
        Ok(())
    }
}

/// Barometric pressure at `altitude_m` for a standard atmosphere.
pub fn standard_pressure_hpa(altitude_m: f64) -> f64 {
    1013.25 * (1.0 - 2.25577e-5 * altitude_m).powf(5.25588)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub first_year: Vec<AccidentRecord>,
    pub second_year: Vec<AccidentRecord>,
    pub stations: Vec<StationSeries>,
}

impl SynthOutput {
    pub fn accidents(&self) -> impl Iterator<Item = &AccidentRecord> {
        self.first_year.iter().chain(&self.second_year)
    }
}

/// Written next to the CSVs so a run can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub stations: Vec<StationSite>,
    pub accidents_per_year: BTreeMap<i32, usize>,
    pub weather_rows: usize,
}

impl SynthManifest {
    pub fn new(config: &SynthConfig, out: &SynthOutput) -> Self {
        let mut per_year = BTreeMap::new();
        for a in out.accidents() {
            *per_year.entry(a.timestamp.year()).or_insert(0) += 1;
        }
        SynthManifest {
            config: config.clone(),
            stations: station_sites(config),
            accidents_per_year: per_year,
            weather_rows: out.stations.iter().map(|s| s.observations.len()).sum(),
        }
    }
}

/// Default sites first, then extra sites derived from the seed.
pub fn station_sites(config: &SynthConfig) -> Vec<StationSite> {
    let mut sites: Vec<StationSite> = default_station_sites().into_iter().take(config.n_stations).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x5747));
    let (lo, hi) = (config.bbox.min(), config.bbox.max());
    while sites.len() < config.n_stations {
        let k = sites.len();
        sites.push(StationSite {
            id: format!("S{k:03}"),
            location: GeoPoint::new(rng.random_range(lo.lat()..=hi.lat()), rng.random_range(lo.lon()..=hi.lon()))
                .expect("inside box"),
            altitude_m: rng.random_range(950.0..1200.0),
        });
    }
    sites
}

/// Which component produced an accident.
#[derive(Clone, Copy)]
enum Source {
    Uniform,
    Hotspot(usize),
}

struct Sampler<'a> {
    config: &'a SynthConfig,
    choose: Option<WeightedIndex<f64>>,
    hours: WeightedIndex<f64>,
    unit: Normal<f64>,
}

impl<'a> Sampler<'a> {
    fn new(config: &'a SynthConfig) -> Self {
        let choose = (!config.hotspots.is_empty())
            .then(|| WeightedIndex::new(config.hotspots.iter().map(|h| h.weight)).expect("validated weights"));
        // Rush hours 7-9 and 17-19 are three times as likely.
        let hours = WeightedIndex::new((0..24).map(|h| if (7..=9).contains(&h) || (17..=19).contains(&h) { 3.0 } else { 1.0 }))
            .expect("positive weights");
        Sampler { config, choose, hours, unit: Normal::new(0.0, 1.0).expect("unit normal") }
    }

    fn source(&self, rng: &mut ChaCha8Rng) -> Source {
        match &self.choose {
            Some(w) if rng.random::<f64>() >= self.config.uniform_fraction => Source::Hotspot(w.sample(rng)),
            _ => Source::Uniform,
        }
    }

    fn uniform_point(&self, rng: &mut ChaCha8Rng) -> GeoPoint {
        let (lo, hi) = (self.config.bbox.min(), self.config.bbox.max());
        GeoPoint::new(rng.random_range(lo.lat()..=hi.lat()), rng.random_range(lo.lon()..=hi.lon())).expect("inside box")
    }

    /// Gaussian around `center` in local kilometres, redrawn until inside the box.
    fn near(&self, center: GeoPoint, stddev_km: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
        loop {
            let dn = self.unit.sample(rng) * stddev_km;
            let de = self.unit.sample(rng) * stddev_km;
            if let Some(p) = offset_km(center, dn, de).filter(|p| self.config.bbox.contains(*p)) {
                return p;
            }
        }
    }

    fn location(&self, source: Source, centers: &[GeoPoint], rng: &mut ChaCha8Rng) -> GeoPoint {
        match source {
            Source::Uniform => self.uniform_point(rng),
            Source::Hotspot(k) => self.near(centers[k], self.config.hotspots[k].stddev_km, rng),
        }
    }

    fn speed_limit(&self, source: Source, rng: &mut ChaCha8Rng) -> u32 {
        match source {
            Source::Uniform => SPEED_LIMITS[rng.random_range(0..SPEED_LIMITS.len())],
            Source::Hotspot(k) => self.config.hotspots[k].speed_limit,
        }
    }

    fn timestamp(&self, year: i32, rng: &mut ChaCha8Rng) -> NaiveDateTime {
        let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
        let days = NaiveDate::from_ymd_opt(year + 1, 1, 1).expect("valid year").signed_duration_since(start).num_days();
        let day = start + Duration::days(rng.random_range(0..days));
        let hour = self.hours.sample(rng) as u32;
        day.and_hms_opt(hour, rng.random_range(0..60), 0).expect("valid time")
    }
}

/// Moves `p` by `north_km` and `east_km`; `None` if that leaves valid coordinates.
fn offset_km(p: GeoPoint, north_km: f64, east_km: f64) -> Option<GeoPoint> {
    let lat = p.lat() + north_km / KM_PER_DEGREE;
    let lon = p.lon() + east_km / (KM_PER_DEGREE * p.lat().to_radians().cos());
    GeoPoint::new(lat, lon).ok()
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Hourly observations for one station over `years`.
fn station_series(site: &StationSite, index: usize, years: [i32; 2], seed: u64) -> StationSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ (0xCAFE + index as u64)));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let base_pressure = standard_pressure_hpa(site.altitude_m);
    // Cooler at altitude, about 6.5 degrees per km.
    let temp_base = 22.0 - 6.5 * (site.altitude_m - 1100.0) / 1000.0;
    let start = NaiveDate::from_ymd_opt(years[0], 1, 1).expect("valid year").and_hms_opt(0, 0, 0).expect("midnight");
    let end = NaiveDate::from_ymd_opt(years[1] + 1, 1, 1).expect("valid year").and_hms_opt(0, 0, 0).expect("midnight");
    let mut series = StationSeries::new(site.id.clone(), site.location);
    let mut t = start;
    while t < end {
        let hour = f64::from(t.hour());
        let doy = f64::from(t.ordinal0());
        let diurnal = (2.0 * PI * (hour - 9.0) / 24.0).sin();
        // Wet season roughly October to April.
        let wet = (2.0 * PI * (doy - 15.0) / 365.0).cos().max(0.0);
        let temperature = round1(temp_base + 5.0 * diurnal + noise.sample(&mut rng));
        let humidity = round1((60.0 - 15.0 * diurnal + 20.0 * wet + 5.0 * noise.sample(&mut rng)).clamp(5.0, 100.0));
        let pressure = round1(base_pressure + 1.5 * (2.0 * PI * hour / 12.0).cos() + 0.8 * noise.sample(&mut rng));
        let wind = round1((2.5 + 1.0 * diurnal + 0.8 * noise.sample(&mut rng)).max(0.0));
        let sun = (PI * (hour - 6.0) / 12.0).sin().max(0.0);
        let solar_radiation = round1((3000.0 * sun * (1.0 - 0.4 * wet) * (1.0 + 0.1 * noise.sample(&mut rng))).max(0.0));
        let rain = if rng.random::<f64>() < 0.02 + 0.12 * wet {
            round1(rng.random_range(0.2..(1.0 + 9.0 * wet)))
        } else {
            0.0
        };
        series.observations.insert(
            t,
            WeatherObservation {
                station_id: site.id.clone(),
                station_location: site.location,
                hour_stamp: t,
                temperature,
                humidity,
                pressure,
                wind,
                solar_radiation,
                rain,
            },
        );
        t += Duration::hours(1);
    }
    series
}

/// Generates both years of accidents and every station's hourly weather.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let sampler = Sampler::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed));
    let [y1, y2] = config.years;

    let centers: Vec<GeoPoint> = config.hotspots.iter().map(|h| h.center).collect();
    let mut sources = Vec::with_capacity(config.n_per_year);
    let mut first_year = Vec::with_capacity(config.n_per_year);
    let draw_site = |rng: &mut ChaCha8Rng| {
        let source = sampler.source(rng);
        let location = sampler.location(source, &centers, rng);
        (source, location, sampler.speed_limit(source, rng))
    };
    let sites: Vec<_> = (0..config.n_sites).map(|_| draw_site(&mut rng)).collect();
    for k in 0..config.n_per_year {
        let (source, location, speed_limit) =
            if sites.is_empty() { draw_site(&mut rng) } else { sites[rng.random_range(0..sites.len())] };
        first_year.push(AccidentRecord {
            id: format!("{y1}-{k:05}"),
            location,
            speed_limit,
            timestamp: sampler.timestamp(y1, &mut rng),
        });
        sources.push(source);
    }

    let drifted: Vec<GeoPoint> = centers
        .iter()
        .map(|&c| {
            let bearing = rng.random_range(0.0..2.0 * PI);
            let dist = rng.random_range(0.0..=1.0) * config.year_drift_km;
            offset_km(c, dist * bearing.cos(), dist * bearing.sin())
                .filter(|p| config.bbox.contains(*p))
                .unwrap_or(c)
        })
        .collect();
    let mut second_year = Vec::with_capacity(config.n_per_year);
    for (k, (prev, &source)) in first_year.iter().zip(&sources).enumerate() {
        // A recurring site keeps its road, and so its speed limit.
        let (location, speed_limit) = if rng.random::<f64>() < config.recurrence {
            let at = if config.site_jitter_km > 0.0 {
                sampler.near(prev.location, config.site_jitter_km, &mut rng)
            } else {
                prev.location
            };
            (at, prev.speed_limit)
        } else {
            (sampler.location(source, &drifted, &mut rng), sampler.speed_limit(source, &mut rng))
        };
        second_year.push(AccidentRecord {
            id: format!("{y2}-{k:05}"),
            location,
            speed_limit,
            timestamp: sampler.timestamp(y2, &mut rng),
        });
    }

    let stations = station_sites(config)
        .iter()
        .enumerate()
        .map(|(i, s)| station_series(s, i, config.years, config.seed))
        .collect();
    Ok(SynthOutput { first_year, second_year, stations })
}
