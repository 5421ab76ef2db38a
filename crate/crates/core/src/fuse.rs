//! Nearest-station weather fusion.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::{AccidentRecord, RejectLog, RejectReason, StationSeries, WeatherObservation, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geo::{haversine_km, GeoPoint};

/// An accident with the weather of the station chosen for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedRecord {
    pub accident: AccidentRecord,
    pub weather: WeatherObservation,
    pub station_distance: f64,
}

/// Stations ordered by distance from `p`; equal distances fall back to
/// station id order.
pub fn nearest_station(p: GeoPoint, stations: &[StationSeries]) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = stations
        .iter()
        .map(|s| (s.station_id.clone(), haversine_km(p, s.station_location)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// The hour an accident is matched against: its timestamp truncated to the
/// hour, shifted by `offset_hours`.
pub fn target_hour(timestamp: NaiveDateTime, offset_hours: i64) -> NaiveDateTime {
    let truncated = timestamp
        .with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zero minute/second is always valid");
    truncated + Duration::hours(offset_hours)
}

/// Joins one accident with the nearest station that has an observation at
/// the target hour.
pub fn join_weather(accident: &AccidentRecord, stations: &[StationSeries], offset_hours: i64) -> Result<JoinedRecord> {
    if stations.is_empty() {
        return Err(Error::NoStations);
    }
    let hour = target_hour(accident.timestamp, offset_hours);
    for (id, distance) in nearest_station(accident.location, stations) {
        let series = stations.iter().find(|s| s.station_id == id).expect("ranked ids come from `stations`");
        if let Some(obs) = series.get(&hour) {
            return Ok(JoinedRecord { accident: accident.clone(), weather: obs.clone(), station_distance: distance });
        }
    }
    Err(Error::NoWeatherAvailable { id: accident.id.clone(), hour: hour.format(TIMESTAMP_FORMAT).to_string() })
}

/// Joins every accident, keeping input order. Accidents without weather at
/// any station are dropped and logged against their input index.
pub fn join_all(
    accidents: &[AccidentRecord],
    stations: &[StationSeries],
    offset_hours: i64,
    exec: Exec,
) -> Result<(Vec<JoinedRecord>, RejectLog)> {
    if stations.is_empty() {
        return Err(Error::NoStations);
    }
    let results = exec.map_slice(accidents, |a| join_weather(a, stations, offset_hours));
    let mut joined = Vec::with_capacity(accidents.len());
    let mut log = RejectLog::default();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(j) => joined.push(j),
            Err(e @ Error::NoWeatherAvailable { .. }) => log.push(index, RejectReason::NoWeatherAvailable, e.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok((joined, log))
}

pub const JOINED_HEADER: [&str; 16] = [
    "id",
    "latitude",
    "longitude",
    "speed_limit_kmh",
    "timestamp",
    "station_id",
    "station_lat",
    "station_lon",
    "station_distance_km",
    "hour_stamp",
    "temp_c",
    "humidity_pct",
    "pressure_hpa",
    "wind_ms",
    "solar_rad_kj_m2",
    "rain_mm",
];

pub fn write_joined<W: Write>(w: W, records: &[JoinedRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(JOINED_HEADER)?;
    for j in records {
        let (a, o) = (&j.accident, &j.weather);
        out.write_record([
            a.id.clone(),
            a.location.lat().to_string(),
            a.location.lon().to_string(),
            a.speed_limit.to_string(),
            a.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            o.station_id.clone(),
            o.station_location.lat().to_string(),
            o.station_location.lon().to_string(),
            j.station_distance.to_string(),
            o.hour_stamp.format(TIMESTAMP_FORMAT).to_string(),
            o.temperature.to_string(),
            o.humidity.to_string(),
            o.pressure.to_string(),
            o.wind.to_string(),
            o.solar_radiation.to_string(),
            o.rain.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_joined`]. Unlike the raw ingest parsers
/// this is strict: any bad row is an error.
pub fn read_joined<R: Read>(input: R) -> Result<Vec<JoinedRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(JOINED_HEADER.iter().copied()) {
        return Err(Error::MalformedHeader {
            expected: JOINED_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let bad = |line: usize, what: &str| Error::Artifact(format!("joined row {line}: bad {what}"));
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(line, JOINED_HEADER[i]));
        let time = |i: usize| {
            NaiveDateTime::parse_from_str(&rec[i], TIMESTAMP_FORMAT).map_err(|_| bad(line, JOINED_HEADER[i]))
        };
        let accident = AccidentRecord {
            id: rec[0].to_string(),
            location: GeoPoint::new(num(1)?, num(2)?)?,
            speed_limit: rec[3].parse().map_err(|_| bad(line, "speed_limit_kmh"))?,
            timestamp: time(4)?,
        };
        let weather = WeatherObservation {
            station_id: rec[5].to_string(),
            station_location: GeoPoint::new(num(6)?, num(7)?)?,
            hour_stamp: time(9)?,
            temperature: num(10)?,
            humidity: num(11)?,
            pressure: num(12)?,
            wind: num(13)?,
            solar_radiation: num(14)?,
            rain: num(15)?,
        };
        out.push(JoinedRecord { accident, weather, station_distance: num(8)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hour(d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn obs(station: &str, loc: GeoPoint, at: NaiveDateTime, temp: f64) -> WeatherObservation {
        WeatherObservation {
            station_id: station.into(),
            station_location: loc,
            hour_stamp: at,
            temperature: temp,
            humidity: 50.0,
            pressure: 890.0,
            wind: 1.0,
            solar_radiation: 0.0,
            rain: 0.0,
        }
    }

    fn station(id: &str, lat: f64, lon: f64, hours: &[NaiveDateTime]) -> StationSeries {
        let loc = GeoPoint::new(lat, lon).unwrap();
        let mut s = StationSeries::new(id, loc);
        for (k, h) in hours.iter().enumerate() {
            s.observations.insert(*h, obs(id, loc, *h, k as f64));
        }
        s
    }

    fn accident(lat: f64, lon: f64, ts: NaiveDateTime) -> AccidentRecord {
        AccidentRecord { id: "x".into(), location: GeoPoint::new(lat, lon).unwrap(), speed_limit: 60, timestamp: ts }
    }

    #[test]
    fn station_at_point_ranks_first() {
        let st = vec![station("B", -15.8, -47.9, &[]), station("A", -15.6, -47.6, &[])];
        let ranked = nearest_station(GeoPoint::new(-15.8, -47.9).unwrap(), &st);
        assert_eq!(ranked[0], ("B".to_string(), 0.0));
    }

    #[test]
    fn equidistant_stations_order_by_id() {
        let st = vec![station("Z", -15.7, -47.9, &[]), station("M", -15.9, -47.9, &[])];
        let ranked = nearest_station(GeoPoint::new(-15.8, -47.9).unwrap(), &st);
        // Symmetric in latitude about the point; distances agree to the ulp
        // only if the formula is symmetric, so compare ids only when equal.
        if ranked[0].1 == ranked[1].1 {
            assert_eq!(ranked[0].0, "M");
        }
        let st = vec![station("Z", -15.8, -47.8, &[]), station("M", -15.8, -47.8, &[])];
        let ranked = nearest_station(GeoPoint::new(-15.8, -47.9).unwrap(), &st);
        assert_eq!(ranked[0].0, "M");
        assert_eq!(ranked[0].1, ranked[1].1);
    }

    #[test]
    fn ranking_matches_resort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st: Vec<_> = (0..5)
            .map(|i| station(&format!("S{i}"), rng.random_range(-16.0..-15.5), rng.random_range(-48.2..-47.4), &[]))
            .collect();
        for _ in 0..50 {
            let p = GeoPoint::new(rng.random_range(-16.0..-15.5), rng.random_range(-48.2..-47.4)).unwrap();
            let mut oracle: Vec<(f64, String)> =
                st.iter().map(|s| (haversine_km(s.station_location, p), s.station_id.clone())).collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got: Vec<String> = nearest_station(p, &st).into_iter().map(|x| x.0).collect();
            let want: Vec<String> = oracle.into_iter().map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn nearest_with_hour_and_fallback() {
        let near = station("near", -15.80, -47.90, &[hour(1, 10)]);
        let far = station("far", -15.60, -47.60, &[hour(1, 10), hour(1, 11)]);
        let st = vec![far, near];
        let j = join_weather(&accident(-15.80, -47.91, hour(1, 10) + Duration::minutes(42)), &st, 0).unwrap();
        assert_eq!(j.weather.station_id, "near");
        assert_eq!(j.weather.hour_stamp, hour(1, 10));
        let j = join_weather(&accident(-15.80, -47.91, hour(1, 11) + Duration::minutes(5)), &st, 0).unwrap();
        assert_eq!(j.weather.station_id, "far");
        assert!(j.station_distance > 30.0);
        // Offset moves the target hour.
        let j = join_weather(&accident(-15.80, -47.91, hour(1, 10) + Duration::minutes(5)), &st, 1).unwrap();
        assert_eq!((j.weather.station_id.as_str(), j.weather.hour_stamp), ("far", hour(1, 11)));
        let e = join_weather(&accident(-15.80, -47.91, hour(1, 12)), &st, 0).unwrap_err();
        assert!(matches!(e, Error::NoWeatherAvailable { .. }));
    }

    #[test]
    fn offset_crosses_midnight() {
        let t = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap().and_hms_opt(23, 30, 0).unwrap();
        assert_eq!(target_hour(t, 1), NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap());
        assert_eq!(target_hour(t, -24), NaiveDate::from_ymd_opt(2020, 12, 30).unwrap().and_hms_opt(23, 0, 0).unwrap());
    }

    #[test]
    fn join_all_logs_and_keeps_order() {
        let st = vec![station("s", -15.8, -47.9, &[hour(1, 1), hour(1, 3)])];
        let acc: Vec<_> = (1..=4)
            .map(|h| AccidentRecord { id: format!("a{h}"), ..accident(-15.8, -47.9, hour(1, h)) })
            .collect();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let (joined, log) = join_all(&acc, &st, 0, exec).unwrap();
            assert_eq!(joined.iter().map(|j| j.accident.id.as_str()).collect::<Vec<_>>(), ["a1", "a3"]);
            assert_eq!(log.entries.iter().map(|e| e.index).collect::<Vec<_>>(), [1, 3]);
        }
        assert!(matches!(join_all(&acc, &[], 0, Exec::Sequential), Err(Error::NoStations)));
    }

    #[test]
    fn joined_file_round_trip() {
        let st = vec![station("s", -15.8, -47.9, &[hour(1, 1)])];
        let (joined, _) = join_all(&[accident(-15.81, -47.93, hour(1, 1))], &st, 0, Exec::Sequential).unwrap();
        let mut buf = Vec::new();
        write_joined(&mut buf, &joined).unwrap();
        assert_eq!(read_joined(buf.as_slice()).unwrap(), joined);
    }
}
