use std::hint::black_box;

use attmot_core::assoc::{run_sequence, solve_assignment, AssocConfig, CostMatrix, CostMode};
use attmot_core::fusion::{predict_attributes, FusionDims, FusionParams, FusionStrategy};
use attmot_core::pipeline::{simulate_benchmark, BenchmarkConfig};
use attmot_core::synthgen::WorldConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lap(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_assignment");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [8usize, 32, 128] {
        let mut cost = CostMatrix::new(n, n);
        for r in 0..n {
            for col in 0..n {
                cost.set(r, col, rng.random_range(0.0..1.0));
            }
        }
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| solve_assignment(black_box(cost), 0.8))
        });
    }
    group.finish();
}

fn fusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_attributes");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e: Vec<f64> = (0..512).map(|_| rng.random_range(-0.05..0.05)).collect();
    let a: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
    for strategy in [FusionStrategy::PreprocAttr, FusionStrategy::CrossFertilize(2), FusionStrategy::ConcatThenSelf] {
        let dims = FusionDims { dim: 512, tokens: 8, classes: 10 };
        let p = FusionParams::init(dims, strategy, 1).unwrap();
        group.bench_function(strategy.to_string(), |b| b.iter(|| predict_attributes(black_box(&e), &a, strategy, &p)));
    }
    group.finish();
}

fn tracker(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_sequence");
    group.sample_size(10);
    let cfg = BenchmarkConfig { sequences: 1, world: WorldConfig::occlusion_heavy(), ..Default::default() };
    let seq = simulate_benchmark(&cfg).unwrap().remove(0);
    for mode in [CostMode::Iou, CostMode::Embed, CostMode::EmbedPlusAttr] {
        let assoc = AssocConfig::with_mode(mode);
        group.bench_function(mode.to_string(), |b| b.iter(|| run_sequence(black_box(&seq.frames), &assoc, None)));
    }
    group.finish();
}

criterion_group!(benches, lap, fusion, tracker);
criterion_main!(benches);
