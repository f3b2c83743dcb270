use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use medfuse_core::embedding::{fuse_additive, fuse_concat, fuse_mufuse, fuse_mufuse_repeat};
use medfuse_core::Mat;

fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect()
}

fn fusion(c: &mut Criterion) {
    let d = 144;
    let e_f = wave(d, 0.0);
    let mut g = c.benchmark_group("fusion_d144");
    for k in [1, 4, 12, 144] {
        let e_v = wave(d / k, 1.0);
        g.bench_with_input(BenchmarkId::new("mufuse_block", k), &k, |b, _| {
            b.iter(|| fuse_mufuse(black_box(&e_f), black_box(&e_v)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mufuse_repeat", k), &k, |b, _| {
            b.iter(|| fuse_mufuse_repeat(black_box(&e_f), black_box(&e_v)).unwrap())
        });
    }
    let e_v = wave(d, 1.0);
    g.bench_function("additive", |b| {
        b.iter(|| fuse_additive(black_box(&e_f), black_box(&e_v)).unwrap())
    });
    let dp = 36;
    let proj = Mat::from_vec(d, d + dp, wave(d * (d + dp), 2.0)).unwrap();
    let e_v = wave(dp, 1.0);
    g.bench_function("concat_dprime36", |b| {
        b.iter(|| fuse_concat(black_box(&e_f), black_box(&e_v), &proj).unwrap())
    });
    g.finish();
}

criterion_group!(benches, fusion);
criterion_main!(benches);
