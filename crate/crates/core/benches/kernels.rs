use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepgcn::data::generate_sbm;
use deepgcn::exec::Execution;
use deepgcn::graph_ops::propagation_operator;
use deepgcn::harness::{run_many, TrainConfig};
use deepgcn::linalg::{matmul_tn_with, matmul_with, spmm_with, DenseMatrix};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

// Shapes of a Cora-sized first layer: 2708 nodes, 1433 features, width 16.
fn dense(c: &mut Criterion) {
    let x = random(2708, 1433, 1);
    let w = random(1433, 16, 2);
    let g = random(2708, 16, 3);
    let mut group = c.benchmark_group("dense");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("matmul", name), |b| {
            b.iter(|| matmul_with(black_box(&x), black_box(&w), exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("matmul_tn", name), |b| {
            b.iter(|| matmul_tn_with(black_box(&x), black_box(&g), exec).unwrap())
        });
    }
    group.finish();
}

fn sparse(c: &mut Criterion) {
    let spec = "blocks=7,nodes=387,p_in=0.01,p_out=0.0005,dim=8".parse().unwrap();
    let data = generate_sbm(&spec).unwrap();
    let op = propagation_operator(&data.graph, Some(1.0));
    let mut group = c.benchmark_group("spmm");
    for width in [16, 256] {
        let y = random(data.node_count(), width, 4);
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(name, width), |b| {
                b.iter(|| spmm_with(op.matrix(), black_box(&y), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let mut cfg = TrainConfig {
        depth: 10,
        max_epochs: 20,
        runs: 4,
        ..TrainConfig::default()
    };
    cfg.set("sbm", "blocks=7,nodes=60,p_in=0.08,p_out=0.005,dim=32,train=10,val=70,test=200")
        .unwrap();
    let data = cfg.load_data().unwrap();
    let mut group = c.benchmark_group("runs");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("four_runs", name), |b| {
            b.iter(|| run_many(&cfg, &data, "", exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dense, sparse, training);
criterion_main!(benches);
