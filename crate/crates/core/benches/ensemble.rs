use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plii_sim::config::ModelConfig;
use plii_sim::ensemble::{run_paths_parallel, run_paths_sequential};
use plii_sim::rng::{eps_domain, path_rng};
use plii_sim::simulate::PrelimitSimulator;

const SEED: u64 = 1;

fn ensembles(c: &mut Criterion) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/two_state.json");
    let m = ModelConfig::load(&path).and_then(|c| c.build()).expect("fixture loads");
    let mut group = c.benchmark_group("prelimit_terminal");
    group.sample_size(10);
    for eps in [0.1, 0.01] {
        let sim = PrelimitSimulator::new(&m.spec, &m.model, eps, 1.0).expect("simulator");
        let path_end = |i: usize| {
            let mut rng = path_rng(SEED, eps_domain(0), i as u64);
            sim.run(&m.xi0, m.x0, &mut rng).expect("path").terminal()[0]
        };
        let n = 2000;
        group.bench_with_input(BenchmarkId::new("sequential", eps), &n, |b, &n| {
            b.iter(|| black_box(run_paths_sequential(n, path_end)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", eps), &n, |b, &n| {
            b.iter(|| black_box(run_paths_parallel(n, path_end)))
        });
    }
    group.finish();
}

criterion_group!(benches, ensembles);
criterion_main!(benches);
