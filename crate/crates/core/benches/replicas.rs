use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfbd::coupling::coupled_distance_curve;
use mfbd::ssa::{simulate_replicas, Method, SimOptions};
use mfbd::{DistN, Execution, Interaction, RateModel};

fn model() -> RateModel {
    RateModel::power(1.0, 5.0, 1.0).with_interaction(Interaction::attractive(1.0))
}

fn grid() -> Vec<f64> {
    (0..=10).map(|j| j as f64 * 0.2).collect()
}

fn replicas(c: &mut Criterion) {
    let m = model();
    let law = DistN::uniform(0, 4).unwrap();
    let grid = grid();
    let mut g = c.benchmark_group("simulate_replicas");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(BenchmarkId::new(name, "n32_r64"), |b| {
            b.iter(|| simulate_replicas(&m, &law, 32, 64, 2.0, &grid, 1, SimOptions::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn methods(c: &mut Criterion) {
    let m = model();
    let law = DistN::uniform(0, 4).unwrap();
    let grid = grid();
    let mut g = c.benchmark_group("ssa_method");
    g.sample_size(10);
    for n in [16, 256] {
        for (name, method) in [("direct", Method::Direct), ("classes", Method::Classes)] {
            let opts = SimOptions { method, ..SimOptions::default() };
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| simulate_replicas(&m, &law, n, 8, 2.0, &grid, 1, opts, Execution::Sequential).unwrap())
            });
        }
    }
    g.finish();
}

fn coupling(c: &mut Criterion) {
    let m = model();
    let x0 = DistN::uniform(0, 4).unwrap();
    let y0 = DistN::delta(0);
    let grid = grid();
    let mut g = c.benchmark_group("coupled_distance_curve");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(BenchmarkId::new(name, "n16_r64"), |b| {
            b.iter(|| coupled_distance_curve(&m, &x0, &y0, 16, 64, &grid, 1, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, replicas, methods, coupling);
criterion_main!(benches);
