use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use maskfuse_core::metrics::{boundary_band_dense, vc_many, ClipEvaluator, EvalConfig};
use maskfuse_core::pipeline::{refine_predictions, PipelineConfig};
use maskfuse_core::refine::{refine_frame, RefineConfig};
use maskfuse_core::synth::{generate_bundle, PerturbConfig, SynthBundle, SynthConfig};
use maskfuse_core::{rle_decode, rle_encode};

fn bundle(width: usize, height: usize, frames: usize) -> SynthBundle {
    generate_bundle(&SynthConfig {
        width,
        height,
        frames,
        feature_dim: 0,
        perturb: PerturbConfig {
            boundary_jitter_radius: 2,
            class_swap_rate: 0.1,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap()
}

fn rle(c: &mut Criterion) {
    let b = bundle(853, 480, 1);
    let mask = b.masklets[0].masklets()[0].mask().clone();
    let bits = rle_decode(&mask).unwrap();
    let mut g = c.benchmark_group("rle");
    g.throughput(Throughput::Elements(bits.len() as u64));
    g.bench_function("encode_853x480", |bench| {
        bench.iter(|| rle_encode(black_box(&bits), 853, 480).unwrap())
    });
    g.bench_function("decode_853x480", |bench| {
        bench.iter(|| rle_decode(black_box(&mask)).unwrap())
    });
    g.finish();
}

fn refine(c: &mut Criterion) {
    let b = bundle(853, 480, 1);
    let cfg = RefineConfig::default();
    c.bench_function("refine_frame_853x480", |bench| {
        bench.iter(|| refine_frame(black_box(&b.pred[0]), &b.masklets[0], &cfg, None).unwrap())
    });
    let clip = bundle(256, 256, 32);
    c.bench_function("refine_clip_256x256x32", |bench| {
        bench.iter(|| refine_predictions(black_box(&clip.pred), &clip.masklets, &PipelineConfig::default()).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let b = bundle(853, 480, 16);
    let mut g = c.benchmark_group("boundary_band");
    for r in [1usize, 2, 5] {
        g.bench_with_input(BenchmarkId::from_parameter(r), &r, |bench, &r| {
            bench.iter(|| boundary_band_dense(black_box(&b.clip.gt[0]), r))
        });
    }
    g.finish();
    c.bench_function("vc_8_16_853x480x16", |bench| {
        bench.iter(|| vc_many(black_box(&b.clip.gt), &b.pred, &[8, 16]).unwrap())
    });
    let eval = ClipEvaluator::new(&b.clip.gt, 124, &EvalConfig::default());
    c.bench_function("score_clip_853x480x16", |bench| {
        bench.iter(|| eval.score(black_box(&b.pred)).unwrap())
    });
}

criterion_group!(benches, rle, refine, metrics);
criterion_main!(benches);
