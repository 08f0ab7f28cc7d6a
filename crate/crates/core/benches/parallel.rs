use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use semprobe::clustering::cluster_batch;
use semprobe::evaluation::{run_protocol, Protocol, ProtocolConfig, TaskFeatures};
use semprobe::probe::logreg::objective_and_gradient;
use semprobe::synthetic::{make_synthetic_task, pipeline_task, SyntheticTaskConfig};
use semprobe::{ClusterMode, Execution, Position, Stream};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn world(n: usize) -> semprobe::synthetic::SyntheticWorld {
    let cfg = SyntheticTaskConfig { n_prompts: n, ..Default::default() };
    make_synthetic_task(&cfg, Execution::Parallel).unwrap()
}

fn bench_synthetic(c: &mut Criterion) {
    let mut g = c.benchmark_group("synthetic_generation");
    g.sample_size(10);
    let cfg = SyntheticTaskConfig { n_prompts: 2000, ..Default::default() };
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| make_synthetic_task(black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

fn bench_clustering(c: &mut Criterion) {
    let w = world(2000);
    let oracle = w.oracle();
    let texts: Vec<Vec<&str>> = w.generations.iter().map(|g| g.sample_texts()).collect();
    let mut g = c.benchmark_group("cluster_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cluster_batch(exec, black_box(&texts), &oracle, ClusterMode::FirstMember))
        });
    }
    g.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let (n, dim) = (20_000, 256);
    let x: Vec<f64> = (0..n * dim).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    let y: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let theta = vec![0.01; dim + 1];
    let mut g = c.benchmark_group("probe_gradient");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| objective_and_gradient(exec, black_box(&x), &y, dim, 1.0, &theta))
        });
    }
    g.finish();
}

fn bench_protocol(c: &mut Criterion) {
    let features = TaskFeatures { position: Position::Slt, stream: Stream::Hidden, layers: vec![3] };
    let tasks: Vec<_> = (0..3u64)
        .map(|k| {
            let cfg = SyntheticTaskConfig { name: format!("t{k}"), seed: k, n_prompts: 1000, ..Default::default() };
            let w = make_synthetic_task(&cfg, Execution::Parallel).unwrap();
            pipeline_task(&w, &features, 0.2, 0, Execution::Parallel).unwrap().0
        })
        .collect();
    let mut g = c.benchmark_group("loo_protocol");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = ProtocolConfig { exec, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_protocol(Protocol::SingleTrainLoo, black_box(&tasks), &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_synthetic, bench_clustering, bench_gradient, bench_protocol);
criterion_main!(benches);
