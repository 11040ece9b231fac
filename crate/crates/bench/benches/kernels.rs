use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amodal::assignment::max_weight_assignment;
use amodal::hom::{backward, extract_roi_feature, forward, HeadConfig, HeadParams, LossWeights};
use amodal::metrics::{evaluate_scene, hungarian_match};
use amodal::{generate_scene, segment, GenConfig};

fn bench_assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("assignment");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [4, 8, 16, 32] {
        let w: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| b.iter(|| max_weight_assignment(black_box(w))));
    }
    g.finish();
}

fn bench_masks(c: &mut Criterion) {
    let s = generate_scene(&GenConfig { seed: 3, ..Default::default() }, 0).unwrap();
    let m = &s.annotations[0].amodal;
    c.bench_function("rle/encode", |b| b.iter(|| black_box(m).to_rle()));
    let rle = m.to_rle();
    c.bench_function("rle/decode", |b| {
        b.iter(|| amodal::BinaryMask::from_rle(m.width(), m.height(), black_box(&rle)).unwrap())
    });
    c.bench_function("mask/boundary_dilate", |b| b.iter(|| black_box(m).boundary().dilate(1)));
}

fn bench_scenes(c: &mut Criterion) {
    let cfg = GenConfig { seed: 5, ..Default::default() };
    c.bench_function("scene/generate", |b| b.iter(|| generate_scene(black_box(&cfg), 7).unwrap()));
    let s = generate_scene(&cfg, 7).unwrap();
    c.bench_function("segment/depth", |b| {
        b.iter(|| segment::depth_layer_segmenter(black_box(&s), &Default::default()).unwrap())
    });
    let preds = segment::oracle_segmenter(&s);
    c.bench_function("metrics/match", |b| b.iter(|| hungarian_match(black_box(&preds), &s.annotations).unwrap()));
    c.bench_function("metrics/evaluate_scene", |b| {
        b.iter(|| evaluate_scene(black_box(&preds), &s.annotations, 1).unwrap())
    });
}

fn bench_head(c: &mut Criterion) {
    let s = generate_scene(&GenConfig { seed: 9, ..Default::default() }, 1).unwrap();
    let bbox = s.annotations[0].bbox;
    let mut g = c.benchmark_group("head");
    g.sample_size(20);
    for q in [4, 8] {
        let cfg = HeadConfig { channels: q, ..Default::default() };
        let f = extract_roi_feature(&s, bbox, &cfg).unwrap();
        let p = HeadParams::init(&cfg);
        let w = LossWeights::default();
        g.bench_with_input(BenchmarkId::new("forward", q), &q, |b, _| b.iter(|| forward(&p, black_box(&f), &cfg).unwrap()));
        g.bench_with_input(BenchmarkId::new("backward", q), &q, |b, _| {
            b.iter(|| backward(&p, black_box(&f), &cfg, &w).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_assignment, bench_masks, bench_scenes, bench_head);
criterion_main!(benches);
