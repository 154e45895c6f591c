//! Parallel-vs-sequential throughput on the data-parallel inner loops.
//!
//! The same library calls run once inside a single-thread rayon pool (the
//! sequential schedule) and once on the default pool, so the speedup of the
//! row-parallel code paths is measured directly. Building with
//! `--no-default-features` removes rayon entirely and gives the same
//! numbers as the single-thread pool here.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use arcquant_core::baselines::{hadamard_apply, HadamardTransform};
use arcquant_core::blockquant::quantize_tensor;
use arcquant_core::calibration::build_profile;
use arcquant_core::formats::FormatSpec;
use arcquant_core::gemm::gemm_dequant;
use arcquant_core::pipeline::{augment, quantize_activation_arc, quantize_weight_arc};
use arcquant_core::tensorio::gen_synthetic;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let seq = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let par = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("seq", seq), ("par", par)]
}

fn bench_quantize(c: &mut Criterion) {
    let x = gen_synthetic(256, 4096, 8, 32.0, 0).unwrap();
    let spec = FormatSpec::nvfp4();
    let mut group = c.benchmark_group("quantize_tensor_nvfp4");
    group.throughput(Throughput::Elements((x.rows() * x.cols()) as u64));
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &x, |b, x| {
            b.iter(|| pool.install(|| quantize_tensor(black_box(x), &spec).unwrap()));
        });
    }
    group.finish();
}

fn bench_dual_stage(c: &mut Criterion) {
    let x = gen_synthetic(128, 2048, 4, 32.0, 1).unwrap();
    let spec = FormatSpec::nvfp4();
    let profile = build_profile(&[x.clone()], "bench").unwrap();
    let mut group = c.benchmark_group("dual_stage_activation");
    group.throughput(Throughput::Elements((x.rows() * x.cols()) as u64));
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &x, |b, x| {
            b.iter(|| {
                pool.install(|| quantize_activation_arc(black_box(x), &profile, &spec).unwrap())
            });
        });
    }
    group.finish();
}

fn bench_gemm(c: &mut Criterion) {
    let x = gen_synthetic(96, 1024, 4, 32.0, 2).unwrap();
    let w = gen_synthetic(192, 1024, 0, 1.0, 3).unwrap();
    let spec = FormatSpec::nvfp4();
    let profile = build_profile(&[x.clone()], "bench").unwrap();
    let act = quantize_activation_arc(&x, &profile, &spec).unwrap();
    let wt = quantize_weight_arc(&w, &profile, &spec).unwrap();
    let aug = augment(&act, &wt).unwrap();
    let mut group = c.benchmark_group("gemm_dequant_augmented");
    let flops = 2 * x.rows() * aug.act.k_padded * w.rows();
    group.throughput(Throughput::Elements(flops as u64));
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &aug, |b, aug| {
            b.iter(|| pool.install(|| gemm_dequant(black_box(&aug.act), &aug.wt).unwrap()));
        });
    }
    group.finish();
}

fn bench_hadamard(c: &mut Criterion) {
    let x = gen_synthetic(512, 2048, 2, 32.0, 4).unwrap();
    let t = HadamardTransform::for_width(x.cols(), 0).unwrap();
    let mut group = c.benchmark_group("hadamard_apply");
    group.throughput(Throughput::Elements((x.rows() * x.cols()) as u64));
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &x, |b, x| {
            b.iter(|| pool.install(|| hadamard_apply(black_box(x), &t).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_quantize,
    bench_dual_stage,
    bench_gemm,
    bench_hadamard
);
criterion_main!(benches);
