use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hotspot_core::data::{self, AccidentRecord, CleaningRules, RejectLog, StationSeries};
use hotspot_core::eval::{self, format_table, EvalReport, Model};
use hotspot_core::forest::mdi_importance;
use hotspot_core::fuse::{self, JoinedRecord};
use hotspot_core::geo::{make_grid, GridSpec};
use hotspot_core::labeling::{build_dataset, count_per_cell, records_in_year, Dataset};
use hotspot_core::render::{self, FigureSpec};
use hotspot_core::synth::{self, SynthConfig, SynthManifest};
use hotspot_core::{BoundingBox, Error, Exec, GeoPoint};

use crate::args::*;
use crate::CliError;

type Res<T> = Result<T, CliError>;

fn open(path: &Path) -> Res<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Res<()> {
    let mut w = create(path)?;
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Res<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    Ok(serde_json::from_reader(open(path)?).map_err(Error::from)?)
}

/// Runs a writer callback against a buffered file.
fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> hotspot_core::Result<()>) -> Res<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn say(line: impl AsRef<str>) {
    println!("{}", line.as_ref());
}

pub fn synth(a: &SynthArgs) -> Res<()> {
    let config = SynthConfig {
        bbox: a.bbox.get(),
        n_per_year: a.n_per_year,
        n_sites: a.n_sites,
        uniform_fraction: a.uniform_fraction,
        year_drift_km: a.year_drift_km,
        recurrence: a.recurrence,
        site_jitter_km: a.site_jitter_km,
        n_stations: a.n_stations,
        seed: a.seed,
        years: [a.years[0], a.years[1]],
        ..SynthConfig::default()
    };
    let out = synth::generate(&config)?;
    let dir = &a.out.out;
    let accidents: Vec<AccidentRecord> = out.accidents().cloned().collect();
    write_with(&dir.join("accidents.csv"), |w| data::write_accidents(w, &accidents))?;
    write_with(&dir.join("weather.csv"), |w| data::write_weather(w, &out.stations))?;
    write_json(&dir.join("manifest.json"), &SynthManifest::new(&config, &out))?;
    say(format!(
        "wrote {} accidents and {} weather rows to {}",
        accidents.len(),
        out.stations.iter().map(|s| s.observations.len()).sum::<usize>(),
        dir.display()
    ));
    Ok(())
}

struct Cleaned {
    accidents: Vec<AccidentRecord>,
    stations: Vec<StationSeries>,
    accident_rejects: RejectLog,
    weather_rejects: RejectLog,
}

fn clean(accidents: &Path, weather: &Path, rules: &CleaningRules) -> Res<Cleaned> {
    let (accidents, accident_rejects) = data::parse_accidents(open(accidents)?, rules)?;
    let (stations, weather_rejects) = data::parse_weather(open(weather)?)?;
    Ok(Cleaned { accidents, stations, accident_rejects, weather_rejects })
}

fn write_cleaned(dir: &Path, c: &Cleaned) -> Res<()> {
    write_with(&dir.join("accidents.clean.csv"), |w| data::write_accidents(w, &c.accidents))?;
    write_with(&dir.join("weather.clean.csv"), |w| data::write_weather(w, &c.stations))?;
    write_with(&dir.join("rejects_accidents.csv"), |w| c.accident_rejects.write_csv(w))?;
    write_with(&dir.join("rejects_weather.csv"), |w| c.weather_rejects.write_csv(w))?;
    say(format!(
        "accidents: {} kept, {} rejected; weather: {} stations, {} rows rejected",
        c.accidents.len(),
        c.accident_rejects.len(),
        c.stations.len(),
        c.weather_rejects.len()
    ));
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Res<()> {
    let rules = CleaningRules { bbox: a.bbox.get(), years: a.years.as_ref().map(|y| y[0]..=y[1]) };
    let c = clean(&a.accidents, &a.weather, &rules)?;
    write_cleaned(&a.out.out, &c)
}

fn join_and_write(dir: &Path, c: &Cleaned, offset: i64, exec: Exec) -> Res<Vec<JoinedRecord>> {
    let (joined, rejects) = fuse::join_all(&c.accidents, &c.stations, offset, exec)?;
    write_with(&dir.join("joined.csv"), |w| fuse::write_joined(w, &joined))?;
    write_with(&dir.join("rejects_join.csv"), |w| rejects.write_csv(w))?;
    say(format!("joined {} accidents, {} without weather", joined.len(), rejects.len()));
    Ok(joined)
}

pub fn join(a: &JoinArgs, exec: Exec) -> Res<()> {
    let rules = CleaningRules { bbox: a.bbox.get(), years: None };
    let c = clean(&a.accidents, &a.weather, &rules)?;
    join_and_write(&a.out.out, &c, a.offset.time_offset_hours, exec)?;
    Ok(())
}

fn dataset_path(dir: &Path, year: i32) -> PathBuf {
    dir.join(format!("dataset_{year}.csv"))
}

/// Grids both years and writes the dataset files and `grid.json`.
fn grid_and_write(dir: &Path, joined: &[JoinedRecord], bbox: BoundingBox, cells: usize, years: &YearsArg) -> Res<(Dataset, Dataset)> {
    let grid = make_grid(bbox, cells)?;
    write_json(&dir.join("grid.json"), &grid)?;
    let mut out = Vec::new();
    for year in [years.train_year, years.test_year] {
        let records = records_in_year(joined, year);
        let d = build_dataset(&records, &grid)?;
        write_with(&dataset_path(dir, year), |w| d.write_csv(w))?;
        write_json(&dir.join(format!("counts_{year}.json")), &count_per_cell(&records, &grid)?)?;
        say(format!("{year}: {} rows on a {}x{} grid", d.len(), grid.rows(), grid.cols()));
        out.push(d);
    }
    let test = out.pop().expect("two years");
    let train = out.pop().expect("two years");
    Ok((train, test))
}

pub fn grid(a: &GridArgs) -> Res<()> {
    let joined = fuse::read_joined(open(&a.joined)?)?;
    grid_and_write(&a.out.out, &joined, a.bbox.get(), a.cells, &a.years)?;
    Ok(())
}

fn read_dataset(path: &Path, grid: &Path) -> Res<Dataset> {
    let grid: GridSpec = read_json(grid)?;
    Ok(Dataset::read_csv(open(path)?, grid)?)
}

fn train_and_write(dir: &Path, train: &Dataset, m: &ModelArgs, exec: Exec) -> Res<Model> {
    let model = eval::train_model(train, m.kind(), m.task(), &m.params(), exec)?;
    write_bytes(&dir.join("model.json"), &model.to_json()?)?;
    say(format!("trained {} on {} rows", m.kind().display_name(), train.len()));
    Ok(model)
}

fn drop_columns(d: Dataset, drop: &[String]) -> Res<Dataset> {
    if drop.is_empty() {
        return Ok(d);
    }
    let keep = eval::kept_columns(&d.feature_names, drop)?;
    Ok(d.select(&keep))
}

pub fn train(a: &TrainArgs, exec: Exec) -> Res<()> {
    let d = drop_columns(read_dataset(&a.dataset, &a.grid)?, &a.drop)?;
    train_and_write(&a.out.out, &d, &a.model, exec)?;
    Ok(())
}

fn report_and_write(path: &Path, report: &EvalReport) -> Res<()> {
    write_bytes(path, &report.to_json()?)?;
    print!("{}", format_table(std::slice::from_ref(report)));
    Ok(())
}

pub fn evaluate(a: &EvalArgs, exec: Exec) -> Res<()> {
    let bytes = fs::read(&a.model).map_err(|e| CliError::Io(format!("{}: {e}", a.model.display())))?;
    let model = Model::from_json(&bytes)?;
    let test = read_dataset(&a.dataset, &a.grid)?;
    // Score on the model's columns, in the model's order.
    let keep = model
        .feature_names()
        .iter()
        .map(|f| test.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone())))
        .collect::<hotspot_core::Result<Vec<_>>>()?;
    let test = test.select(&keep);
    let report = eval::evaluate(&model, &test, exec)?;
    report_and_write(&a.out.out.join("report.json"), &report)
}

/// Cleaned inputs from files, or the default synthetic data for `seed`.
fn source(s: &SourceArgs, seed: u64, dir: &Path) -> Res<Cleaned> {
    let rules = CleaningRules { bbox: s.bbox.get(), years: None };
    match (&s.accidents, &s.weather) {
        (Some(acc), Some(wx)) => clean(acc, wx, &rules),
        _ => {
            let config = SynthConfig {
                bbox: s.bbox.get(),
                seed,
                years: [s.years.train_year, s.years.test_year],
                ..SynthConfig::default()
            };
            let out = synth::generate(&config)?;
            say(format!("no input files given; using synthetic data for seed {seed}"));
            let raw = dir.join("synthetic");
            let accidents: Vec<AccidentRecord> = out.accidents().cloned().collect();
            write_with(&raw.join("accidents.csv"), |w| data::write_accidents(w, &accidents))?;
            write_with(&raw.join("weather.csv"), |w| data::write_weather(w, &out.stations))?;
            write_json(&raw.join("manifest.json"), &SynthManifest::new(&config, &out))?;
            clean(&raw.join("accidents.csv"), &raw.join("weather.csv"), &rules)
        }
    }
}

/// Shared front half of `pipeline` and `ablate`: every intermediate file
/// that the single-step commands would write.
fn prepare(s: &SourceArgs, cells: usize, seed: u64, dir: &Path, exec: Exec) -> Res<(Dataset, Dataset)> {
    let cleaned = source(s, seed, dir)?;
    write_cleaned(dir, &cleaned)?;
    let joined = join_and_write(dir, &cleaned, s.offset.time_offset_hours, exec)?;
    grid_and_write(dir, &joined, s.bbox.get(), cells, &s.years)
}

pub fn pipeline(a: &PipelineArgs, exec: Exec) -> Res<()> {
    let dir = &a.out.out;
    let (train, test) = prepare(&a.source, a.cells, a.model.seed, dir, exec)?;
    let model = train_and_write(dir, &train, &a.model, exec)?;
    let report = eval::evaluate(&model, &test, exec)?;
    report_and_write(&dir.join("report.json"), &report)
}

pub fn ablate(a: &AblateArgs, exec: Exec) -> Res<()> {
    let dir = &a.out.out;
    let (train, test) = prepare(&a.source, a.cells, a.model.seed, dir, exec)?;
    let m = &a.model;
    let report = eval::ablate_features(&train, &test, &a.drop, m.kind(), m.task(), &m.params(), exec)?;
    report_and_write(&dir.join("ablation_report.json"), &report)
}

pub fn sweep(a: &SweepArgs, exec: Exec) -> Res<()> {
    let dir = &a.out.out;
    let s = &a.source;
    let cleaned = source(s, a.model.seed, dir)?;
    let (joined, _) = fuse::join_all(&cleaned.accidents, &cleaned.stations, s.offset.time_offset_hours, exec)?;
    let first = records_in_year(&joined, s.years.train_year);
    let second = records_in_year(&joined, s.years.test_year);
    let m = &a.model;
    let report = eval::grid_sweep(&first, &second, s.bbox.get(), &a.cells, m.kind(), m.task(), &m.params(), exec)?;
    write_bytes(&dir.join("sweep.json"), &report.to_json()?)?;
    say(format!("{:>6} {:>5} {:>9}", "Cells", "Grid", "Accuracy"));
    for e in &report.entries {
        say(format!(
            "{:>6} {:>5} {:>7.1} %",
            e.cell_count,
            format!("{}x{}", e.report.grid_rows, e.report.grid_cols),
            e.report.hit_rate * 100.0
        ));
    }
    Ok(())
}

pub fn importance(a: &ImportanceArgs) -> Res<()> {
    let bytes = fs::read(&a.model).map_err(|e| CliError::Io(format!("{}: {e}", a.model.display())))?;
    let Model::Rf(forest) = Model::from_json(&bytes)? else {
        return Err(Error::InvalidParams("importance needs a random forest model".into()).into());
    };
    let report = mdi_importance(&forest)?;
    write_json(&a.out.out.join("importance.json"), &report)?;
    for name in &report.ranking {
        say(format!("{name:<16} {:.4}", report.get(name).unwrap_or(0.0)));
    }
    Ok(())
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Res<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("this figure needs --{flag}")))
}

pub fn render(a: &RenderArgs) -> Res<()> {
    let spec = FigureSpec::new(a.width, a.height, a.title.clone())?;
    let bbox = a.bbox.get();
    let dir = &a.out.out;
    let (name, svg) = match a.kind {
        FigureKind::Scatter => {
            let rules = CleaningRules { bbox, years: a.year.map(|y| y..=y) };
            let (records, _) = data::parse_accidents(open(need(&a.accidents, "accidents")?)?, &rules)?;
            let points: Vec<GeoPoint> = records.iter().map(|r| r.location).collect();
            let grid = a.cells.map(|c| make_grid(bbox, c)).transpose()?;
            ("scatter.svg", render::render_scatter(&points, bbox, grid.as_ref(), &spec)?)
        }
        FigureKind::Heatmap => {
            let mut joined = fuse::read_joined(open(need(&a.joined, "joined")?)?)?;
            if let Some(y) = a.year {
                joined = records_in_year(&joined, y);
            }
            let counts = count_per_cell(&joined, &make_grid(bbox, a.cells.unwrap_or(80))?)?;
            if a.ppm {
                write_bytes(&dir.join("heatmap.ppm"), &render::heatmap_ppm(&counts, 16)?)?;
            }
            ("heatmap.svg", render::render_grid_heatmap(&counts, &spec)?)
        }
        FigureKind::Importance => {
            let report = read_json(need(&a.importance, "importance")?)?;
            ("importance.svg", render::render_importance(&report, &spec)?)
        }
    };
    let path = dir.join(name);
    write_bytes(&path, svg.as_bytes())?;
    say(format!("wrote {}", path.display()));
    Ok(())
}
