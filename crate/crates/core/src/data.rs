//! Accident and weather CSV schemas, ingestion and cleaning.
//!
//! Both parsers are total over data rows: every row is either accepted or
//! recorded in a [`RejectLog`] with a reason. Only a header mismatch aborts
//! a parse.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::RangeInclusive;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};

pub const ACCIDENT_HEADER: [&str; 5] = ["id", "latitude", "longitude", "speed_limit_kmh", "timestamp"];

pub const WEATHER_HEADER: [&str; 10] = [
    "station_id",
    "station_lat",
    "station_lon",
    "hour_stamp",
    "temp_c",
    "humidity_pct",
    "pressure_hpa",
    "wind_ms",
    "solar_rad_kj_m2",
    "rain_mm",
];

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub const SPEED_LIMIT_RANGE: RangeInclusive<u32> = 10..=130;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub id: String,
    pub location: GeoPoint,
    pub speed_limit: u32,
    pub timestamp: NaiveDateTime,
}

/// One hourly reading from one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub station_id: String,
    pub station_location: GeoPoint,
    /// Local civil time, minutes and seconds zero.
    pub hour_stamp: NaiveDateTime,
    pub temperature: f64,
    pub humidity: f64,
    pub pressure: f64,
    pub wind: f64,
    pub solar_radiation: f64,
    pub rain: f64,
}

/// All observations of a single station, keyed by hour.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub station_location: GeoPoint,
    pub observations: BTreeMap<NaiveDateTime, WeatherObservation>,
}

impl StationSeries {
    pub fn new(station_id: impl Into<String>, station_location: GeoPoint) -> Self {
        StationSeries { station_id: station_id.into(), station_location, observations: BTreeMap::new() }
    }

    pub fn get(&self, hour: &NaiveDateTime) -> Option<&WeatherObservation> {
        self.observations.get(hour)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    MissingField,
    BadNumber,
    OutOfBounds,
    BadTimestamp,
    DuplicateHour,
    /// Row has a different number of columns than the header.
    FieldCount,
    /// A station row disagrees with the station's first-seen location.
    StationMismatch,
    /// Dropped during the weather join: no station had the target hour.
    NoWeatherAvailable,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::MissingField => "MissingField",
            RejectReason::BadNumber => "BadNumber",
            RejectReason::OutOfBounds => "OutOfBounds",
            RejectReason::BadTimestamp => "BadTimestamp",
            RejectReason::DuplicateHour => "DuplicateHour",
            RejectReason::FieldCount => "FieldCount",
            RejectReason::StationMismatch => "StationMismatch",
            RejectReason::NoWeatherAvailable => "NoWeatherAvailable",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// Zero-based data row index (the header is not counted).
    pub index: usize,
    pub reason: RejectReason,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectLog {
    pub entries: Vec<Reject>,
}

impl RejectLog {
    pub fn push(&mut self, index: usize, reason: RejectReason, message: impl Into<String>) {
        self.entries.push(Reject { index, reason, message: message.into() });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.entries.iter().filter(|r| r.reason == reason).count()
    }

    /// Writes `index,reason,message` lines under a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "reason", "message"])?;
        for r in &self.entries {
            out.write_record([r.index.to_string(), r.reason.code().to_string(), r.message.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Filters applied while cleaning accident rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningRules {
    pub bbox: BoundingBox,
    /// Inclusive study years; `None` accepts any year.
    pub years: Option<RangeInclusive<i32>>,
}

impl CleaningRules {
    pub fn new(bbox: BoundingBox) -> Self {
        CleaningRules { bbox, years: None }
    }
}

struct RowError(RejectReason, String);

fn field<'r>(rec: &'r csv::StringRecord, i: usize, name: &str) -> Result<&'r str, RowError> {
    match rec.get(i).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(RowError(RejectReason::MissingField, format!("{name} is empty"))),
    }
}

fn number(rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64, RowError> {
    let s = field(rec, i, name)?;
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(RowError(RejectReason::BadNumber, format!("{name} `{s}` is not a finite number"))),
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a.trim() == *b);
    if ok {
        Ok(())
    } else {
        Err(Error::MalformedHeader {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

fn parse_accident_row(rec: &csv::StringRecord, rules: &CleaningRules) -> Result<AccidentRecord, RowError> {
    if rec.len() != ACCIDENT_HEADER.len() {
        return Err(RowError(
            RejectReason::FieldCount,
            format!("expected {} fields, found {}", ACCIDENT_HEADER.len(), rec.len()),
        ));
    }
    let id = field(rec, 0, "id")?.to_string();
    let lat = number(rec, 1, "latitude")?;
    let lon = number(rec, 2, "longitude")?;
    let speed_raw = field(rec, 3, "speed_limit_kmh")?;
    let ts_raw = field(rec, 4, "timestamp")?;
    let speed_limit = speed_raw
        .parse::<u32>()
        .ok()
        .filter(|s| SPEED_LIMIT_RANGE.contains(s))
        .ok_or_else(|| RowError(RejectReason::BadNumber, format!("speed limit `{speed_raw}` outside 10..=130 km/h")))?;
    let location = GeoPoint::new(lat, lon)
        .ok()
        .filter(|p| rules.bbox.contains(*p))
        .ok_or_else(|| RowError(RejectReason::OutOfBounds, format!("({lat}, {lon}) is outside the study area")))?;
    let timestamp = NaiveDateTime::parse_from_str(ts_raw, TIMESTAMP_FORMAT)
        .map_err(|_| RowError(RejectReason::BadTimestamp, format!("`{ts_raw}` is not YYYY-MM-DDTHH:MM")))?;
    if let Some(years) = &rules.years {
        use chrono::Datelike;
        if !years.contains(&timestamp.year()) {
            return Err(RowError(
                RejectReason::BadTimestamp,
                format!("year {} outside {}..={}", timestamp.year(), years.start(), years.end()),
            ));
        }
    }
    Ok(AccidentRecord { id, location, speed_limit, timestamp })
}

/// Parses and cleans an accident export.
pub fn parse_accidents<R: Read>(input: R, rules: &CleaningRules) -> Result<(Vec<AccidentRecord>, RejectLog)> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &ACCIDENT_HEADER)?;
    let mut records = Vec::new();
    let mut log = RejectLog::default();
    for (index, row) in rdr.records().enumerate() {
        let row = row?;
        match parse_accident_row(&row, rules) {
            Ok(r) => records.push(r),
            Err(RowError(reason, msg)) => log.push(index, reason, msg),
        }
    }
    Ok((records, log))
}

fn parse_weather_row(rec: &csv::StringRecord) -> Result<WeatherObservation, RowError> {
    if rec.len() != WEATHER_HEADER.len() {
        return Err(RowError(
            RejectReason::FieldCount,
            format!("expected {} fields, found {}", WEATHER_HEADER.len(), rec.len()),
        ));
    }
    let station_id = field(rec, 0, "station_id")?.to_string();
    let lat = number(rec, 1, "station_lat")?;
    let lon = number(rec, 2, "station_lon")?;
    let stamp_raw = field(rec, 3, "hour_stamp")?;
    let mut values = [0.0; 6];
    for (k, v) in values.iter_mut().enumerate() {
        *v = number(rec, 4 + k, WEATHER_HEADER[4 + k])?;
    }
    let [temperature, humidity, pressure, wind, solar_radiation, rain] = values;
    let station_location = GeoPoint::new(lat, lon)
        .map_err(|_| RowError(RejectReason::OutOfBounds, format!("station at ({lat}, {lon}) is not a valid coordinate")))?;
    let hour_stamp = NaiveDateTime::parse_from_str(stamp_raw, TIMESTAMP_FORMAT)
        .ok()
        .filter(|t| t.minute() == 0)
        .ok_or_else(|| RowError(RejectReason::BadTimestamp, format!("`{stamp_raw}` is not YYYY-MM-DDTHH:00")))?;
    let bad = |what: &str| RowError(RejectReason::BadNumber, what.to_string());
    if !(0.0..=100.0).contains(&humidity) {
        return Err(bad("humidity outside 0..=100 %"));
    }
    if wind < 0.0 || solar_radiation < 0.0 || rain < 0.0 {
        return Err(bad("wind, solar radiation and rain must be non-negative"));
    }
    Ok(WeatherObservation {
        station_id,
        station_location,
        hour_stamp,
        temperature,
        humidity,
        pressure,
        wind,
        solar_radiation,
        rain,
    })
}

/// Parses a weather export into one series per station, ordered by
/// station id. The first row for a `(station, hour)` wins.
pub fn parse_weather<R: Read>(input: R) -> Result<(Vec<StationSeries>, RejectLog)> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &WEATHER_HEADER)?;
    let mut stations: BTreeMap<String, StationSeries> = BTreeMap::new();
    let mut log = RejectLog::default();
    for (index, row) in rdr.records().enumerate() {
        let row = row?;
        let obs = match parse_weather_row(&row) {
            Ok(o) => o,
            Err(RowError(reason, msg)) => {
                log.push(index, reason, msg);
                continue;
            }
        };
        let series = stations
            .entry(obs.station_id.clone())
            .or_insert_with(|| StationSeries::new(obs.station_id.clone(), obs.station_location));
        if series.station_location != obs.station_location {
            log.push(
                index,
                RejectReason::StationMismatch,
                format!("station {} first seen at a different location", obs.station_id),
            );
            continue;
        }
        if series.observations.contains_key(&obs.hour_stamp) {
            log.push(
                index,
                RejectReason::DuplicateHour,
                format!("station {} already has {}", obs.station_id, obs.hour_stamp.format(TIMESTAMP_FORMAT)),
            );
            continue;
        }
        series.observations.insert(obs.hour_stamp, obs);
    }
    Ok((stations.into_values().collect(), log))
}

/// Writes accidents in the ingest schema.
pub fn write_accidents<W: Write>(w: W, records: &[AccidentRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ACCIDENT_HEADER)?;
    for r in records {
        out.write_record([
            r.id.clone(),
            r.location.lat().to_string(),
            r.location.lon().to_string(),
            r.speed_limit.to_string(),
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes weather series in the ingest schema, station by station, hours
/// ascending.
pub fn write_weather<W: Write>(w: W, stations: &[StationSeries]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(WEATHER_HEADER)?;
    for s in stations {
        for o in s.observations.values() {
            out.write_record([
                o.station_id.clone(),
                o.station_location.lat().to_string(),
                o.station_location.lon().to_string(),
                o.hour_stamp.format(TIMESTAMP_FORMAT).to_string(),
                o.temperature.to_string(),
                o.humidity.to_string(),
                o.pressure.to_string(),
                o.wind.to_string(),
                o.solar_radiation.to_string(),
                o.rain.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> CleaningRules {
        CleaningRules::new(BoundingBox::federal_district())
    }

    const FIXTURE: &str = "\
id,latitude,longitude,speed_limit_kmh,timestamp
a1,-15.79,-47.88,60,2020-03-02T08:15
a2,,-47.88,60,2020-03-02T09:00
a3,-15.80,-47.90,80,2020-07-14T18:40
a4,-14.50,-47.90,60,2021-01-01T00:05
a5,-15.70,-48.00,40,2021-12-31T23:59
";

    #[test]
    fn five_row_fixture() {
        let (recs, log) = parse_accidents(FIXTURE.as_bytes(), &rules()).unwrap();
        assert_eq!(recs.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a1", "a3", "a5"]);
        assert_eq!(log.len(), 2);
        assert_eq!((log.entries[0].index, log.entries[0].reason), (1, RejectReason::MissingField));
        assert_eq!((log.entries[1].index, log.entries[1].reason), (3, RejectReason::OutOfBounds));
        assert_eq!(recs[1].speed_limit, 80);
        assert_eq!(recs[2].timestamp.format(TIMESTAMP_FORMAT).to_string(), "2021-12-31T23:59");
    }

    #[test]
    fn reject_reasons() {
        let body = "\
id,latitude,longitude,speed_limit_kmh,timestamp
b1,-15.79,-47.88,200,2020-03-02T08:15
b2,-15.79,abc,60,2020-03-02T08:15
b3,-15.79,-47.88,60,2020/03/02 08:15
b4,-15.79,-47.88,60
b5,-15.79,-47.88,60,2019-05-05T10:00
b6,95.0,-47.88,60,2020-03-02T08:15
";
        let mut r = rules();
        r.years = Some(2020..=2021);
        let (recs, log) = parse_accidents(body.as_bytes(), &r).unwrap();
        assert!(recs.is_empty());
        let reasons: Vec<_> = log.entries.iter().map(|e| e.reason).collect();
        assert_eq!(
            reasons,
            [
                RejectReason::BadNumber,
                RejectReason::BadNumber,
                RejectReason::BadTimestamp,
                RejectReason::FieldCount,
                RejectReason::BadTimestamp,
                RejectReason::OutOfBounds
            ]
        );
    }

    #[test]
    fn header_mismatch_is_an_error() {
        let err = parse_accidents("id,lat,lon,speed,ts\n".as_bytes(), &rules()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));
        let err = parse_weather("station,lat\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));
    }

    fn weather_header() -> String {
        WEATHER_HEADER.join(",") + "\n"
    }

    #[test]
    fn empty_weather_body() {
        let (series, log) = parse_weather(weather_header().as_bytes()).unwrap();
        assert!(series.is_empty() && log.is_empty());
    }

    #[test]
    fn duplicate_hour_keeps_first() {
        let body = weather_header()
            + "A001,-15.79,-47.93,2020-01-01T10:00,25.0,60,886.1,2.0,1200,0\n"
            + "A001,-15.79,-47.93,2020-01-01T10:00,30.0,60,886.1,2.0,1200,0\n";
        let (series, log) = parse_weather(body.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].observations.len(), 1);
        assert_eq!(series[0].observations.values().next().unwrap().temperature, 25.0);
        assert_eq!(log.entries.len(), 1);
        assert_eq!((log.entries[0].index, log.entries[0].reason), (1, RejectReason::DuplicateHour));
    }

    #[test]
    fn five_stations_by_twenty_four_hours() {
        let mut body = weather_header();
        for s in 0..5 {
            for h in 0..24 {
                body += &format!("S{s},-15.{s}0,-47.{s}0,2020-02-01T{h:02}:00,20,50,900,1,0,0\n");
            }
        }
        let (series, log) = parse_weather(body.as_bytes()).unwrap();
        assert!(log.is_empty());
        assert_eq!(series.len(), 5);
        assert!(series.iter().all(|s| s.observations.len() == 24));
    }

    #[test]
    fn weather_value_checks() {
        let body = weather_header()
            + "A,-15.79,-47.93,2020-01-01T10:30,25,60,886,2,1200,0\n"
            + "A,-15.79,-47.93,2020-01-01T11:00,25,160,886,2,1200,0\n"
            + "A,-15.79,-47.93,2020-01-01T12:00,25,60,886,-2,1200,0\n"
            + "A,-15.79,-47.93,2020-01-01T13:00,25,60,886,2,1200,NaN\n"
            + "A,-15.70,-47.93,2020-01-01T14:00,25,60,886,2,1200,0\n"
            + "A,-15.79,-47.93,2020-01-01T15:00,25,60,886,2,1200,0\n";
        let (series, log) = parse_weather(body.as_bytes()).unwrap();
        let reasons: Vec<_> = log.entries.iter().map(|e| e.reason).collect();
        assert_eq!(
            reasons,
            [
                RejectReason::BadTimestamp,
                RejectReason::BadNumber,
                RejectReason::BadNumber,
                RejectReason::BadNumber,
                RejectReason::StationMismatch
            ]
        );
        // The first accepted row fixes the station location.
        assert_eq!(series[0].observations.len(), 1);
    }

    #[test]
    fn reject_log_csv() {
        let mut log = RejectLog::default();
        log.push(3, RejectReason::OutOfBounds, "outside, far");
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,reason,message\n3,OutOfBounds,\"outside, far\"\n");
    }

    #[test]
    fn accidents_round_trip_through_writer() {
        let (recs, _) = parse_accidents(FIXTURE.as_bytes(), &rules()).unwrap();
        let mut buf = Vec::new();
        write_accidents(&mut buf, &recs).unwrap();
        let (again, log) = parse_accidents(buf.as_slice(), &rules()).unwrap();
        assert!(log.is_empty());
        assert_eq!(again, recs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cell() -> impl Strategy<Value = String> {
            prop_oneof![
                Just(String::new()),
                Just("-15.8".to_string()),
                Just("-47.9".to_string()),
                Just("60".to_string()),
                Just("999".to_string()),
                Just("2020-05-05T10:10".to_string()),
                Just("junk".to_string()),
                "[a-z0-9]{1,4}",
            ]
        }

        proptest! {
            #[test]
            fn accepted_plus_rejected_is_total(rows in proptest::collection::vec(proptest::collection::vec(cell(), 3..7), 0..40)) {
                let mut body = ACCIDENT_HEADER.join(",") + "\n";
                for r in &rows {
                    body += &r.join(",");
                    body += "\n";
                }
                let (recs, log) = parse_accidents(body.as_bytes(), &rules()).unwrap();
                prop_assert_eq!(recs.len() + log.len(), rows.len());
                let mut seen: Vec<usize> = log.entries.iter().map(|e| e.index).collect();
                seen.dedup();
                prop_assert_eq!(seen.len(), log.len());
            }
        }
    }
}
