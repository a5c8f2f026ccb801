//! Sequential vs data-parallel execution of the hot paths.
//!
//! Both modes produce bit-identical results; only wall time differs. On a
//! single-core machine the parallel numbers measure scheduling overhead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use poselift::data::{compute_stats, generate_synthetic, GeneratorConfig, SampleRecord};
use poselift::eval::evaluate;
use poselift::geometry::chain_candidates;
use poselift::model::{InputVariant, LiftingNetwork};
use poselift::nn::{Matrix, NetConfig};
use poselift::parallel::{set_exec, Exec};
use poselift::rng::seeded;
use poselift::skeleton::{bone_lengths, SkeletonTopology};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn dataset(n: usize) -> (SkeletonTopology, Vec<SampleRecord>) {
    let topo = SkeletonTopology::default();
    let recs = generate_synthetic(&GeneratorConfig::default(), &topo, &[1, 5], n / 2, 2.0, 1).unwrap();
    (topo, recs)
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul_256x1024x1024");
    let mut r = seeded(0);
    let mut fill = |rows, cols| {
        use rand::Rng;
        Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random::<f64>() - 0.5).collect()).unwrap()
    };
    let a = fill(256, 1024);
    let b = fill(1024, 1024);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(a.matmul_t_exec(&b, mode).unwrap()))
        });
    }
    g.finish();
}

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_2000");
    g.sample_size(10);
    let topo = SkeletonTopology::default();
    let cfg = GeneratorConfig::default();
    for (name, mode) in MODES {
        set_exec(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(generate_synthetic(&cfg, &topo, &[1, 5], 1000, 2.0, 3).unwrap()))
        });
    }
    set_exec(Exec::Parallel);
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate_2000_width256");
    g.sample_size(10);
    let (topo, recs) = dataset(2000);
    let stats = compute_stats(&recs, &topo).unwrap();
    let net = NetConfig { hidden_dim: 256, ..NetConfig::default() };
    let model = LiftingNetwork::new(InputVariant::JointsCameraBones, Default::default(), stats, topo, net, &mut seeded(0)).unwrap();
    for (name, mode) in MODES {
        set_exec(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |bench| bench.iter(|| black_box(evaluate(&model, &recs).unwrap())));
    }
    set_exec(Exec::Parallel);
    g.finish();
}

fn candidates(c: &mut Criterion) {
    let mut g = c.benchmark_group("chain_candidates_20");
    g.sample_size(10);
    let (topo, recs) = dataset(20);
    for (name, mode) in MODES {
        set_exec(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                for r in &recs {
                    let l = bone_lengths(&r.joints_3d, &topo).unwrap();
                    let z = r.joints_3d.0[topo.root_index()][2];
                    black_box(chain_candidates(&r.joints_2d, &l, &r.camera, &topo, z, 1 << 15).unwrap());
                }
            })
        });
    }
    set_exec(Exec::Parallel);
    g.finish();
}

criterion_group!(benches, matmul, generation, evaluation, candidates);
criterion_main!(benches);
