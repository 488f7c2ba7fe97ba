use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mulearn::catalog;
use mulearn::experiment::{run_experiment, RunConfig};
use mulearn::par::Execution;
use mulearn::vpmu::{instantiate_parameter, validate_update, ValidationConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo_validation(c: &mut Criterion) {
    let m = instantiate_parameter(
        &catalog::load("example1").unwrap(),
        &BTreeMap::from([("A".into(), 2.0)]),
    )
    .unwrap();
    let mut group = c.benchmark_group("validate_update");
    group.sample_size(10);
    for (label, execution) in MODES {
        let cfg = ValidationConfig {
            execution,
            ..ValidationConfig::default()
        };
        group.bench_with_input(BenchmarkId::new(label, 2000), &cfg, |b, cfg| {
            b.iter(|| validate_update(&m, 2000, 1, cfg).unwrap())
        });
    }
    group.finish();
}

fn episode_fan_out(c: &mut Criterion) {
    let base = RunConfig::from_toml(
        r#"
        name = "bench"
        algorithm = "mu"
        episodes = 64
        step_limit = 100
        [env]
        kind = "acc"
        "#,
    )
    .unwrap();
    let mut group = c.benchmark_group("episodes");
    group.sample_size(10);
    for (label, execution) in MODES {
        let mut cfg = base.clone();
        cfg.execution = Some(execution);
        group.bench_with_input(BenchmarkId::new(label, cfg.episodes), &cfg, |b, cfg| {
            b.iter(|| run_experiment(cfg.clone()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo_validation, episode_fan_out);
criterion_main!(benches);
