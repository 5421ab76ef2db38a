//! Sequential versus rayon execution for the data-parallel stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hotspot_core::eval::{grid_sweep, ModelKind, ModelParams};
use hotspot_core::forest::{train_forest_with, ForestParams};
use hotspot_core::fuse::{join_all, JoinedRecord};
use hotspot_core::geo::make_grid;
use hotspot_core::labeling::{build_dataset, Dataset};
use hotspot_core::synth::{generate, SynthConfig, SynthOutput};
use hotspot_core::{BoundingBox, Exec, Task};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

struct Fixture {
    synth: SynthOutput,
    first: Vec<JoinedRecord>,
    second: Vec<JoinedRecord>,
    train: Dataset,
}

fn fixture() -> Fixture {
    let synth = generate(&SynthConfig { n_per_year: 1000, ..Default::default() }).unwrap();
    let (first, _) = join_all(&synth.first_year, &synth.stations, 0, Exec::Parallel).unwrap();
    let (second, _) = join_all(&synth.second_year, &synth.stations, 0, Exec::Parallel).unwrap();
    let grid = make_grid(BoundingBox::federal_district(), 80).unwrap();
    let train = build_dataset(&first, &grid).unwrap();
    Fixture { synth, first, second, train }
}

fn benches(c: &mut Criterion) {
    let fx = fixture();
    let params = ForestParams { n_trees: 32, ..ForestParams::for_task(Task::Regression) };
    let forest = train_forest_with(&fx.train, &params, Exec::Parallel).unwrap();

    let mut g = c.benchmark_group("forest_train");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_forest_with(black_box(&fx.train), &params, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("forest_predict_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| forest.predict_batch(black_box(&fx.train), exec)));
    }
    g.finish();

    let mut g = c.benchmark_group("weather_join");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| join_all(black_box(&fx.synth.first_year), &fx.synth.stations, 0, exec).unwrap())
        });
    }
    g.finish();

    let mut sweep = ModelParams::default();
    sweep.forest.n_trees = 16;
    let mut g = c.benchmark_group("grid_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                grid_sweep(
                    &fx.first,
                    &fx.second,
                    BoundingBox::federal_district(),
                    &[20, 80, 320],
                    ModelKind::Rf,
                    Task::Regression,
                    &sweep,
                    exec,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
