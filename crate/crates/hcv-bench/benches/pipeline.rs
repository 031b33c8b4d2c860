//! End-to-end and refinement benchmarks.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use hcv_core::refine::refine_flow;
use hcv_core::{build_pyramid, estimate, make_synthetic_pair, FlowField, RunConfig};

fn bench_estimate(c: &mut Criterion) {
    let (img1, img2, _) = make_synthetic_pair(256, 256, 7, -4, 42).unwrap();
    let cfg = RunConfig::default();
    let mut group = c.benchmark_group("estimate");
    group.sample_size(10);
    group.bench_function("256x256 defaults", |b| {
        b.iter(|| black_box(estimate(black_box(&img1), black_box(&img2), &cfg, None).unwrap()))
    });
    group.finish();
}

fn bench_refine(c: &mut Criterion) {
    let (img1, img2, _) = make_synthetic_pair(256, 256, 7, -4, 43).unwrap();
    let (f1, _) = build_pyramid(&img1).unwrap();
    let (f2, _) = build_pyramid(&img2).unwrap();
    let seed = FlowField::zeros(f1.height, f1.width, 8);
    let mut group = c.benchmark_group("refine_flow");
    group.sample_size(10);
    group.bench_function("32x32 24 iters r4", |b| {
        b.iter(|| {
            black_box(
                refine_flow(black_box(&f1), black_box(&f2), &seed, 24, 4, 0.006, 0.8).unwrap(),
            )
        })
    });
    group.finish();
}

criterion_group!(benches, bench_estimate, bench_refine);
criterion_main!(benches);
