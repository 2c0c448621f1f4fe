//! Per-stage throughput: HOG on one window, a full-image scan, floor
//! detection, NMS and the spacing DP.

use criterion::{criterion_group, criterion_main, Criterion};
use guardscan_core::classifiers::{LinearSvmModel, SvmTrainConfig, WindowClassifier};
use guardscan_core::detector::{detect, ScanParams};
use guardscan_core::floors::{detect_floors, FloorConfig};
use guardscan_core::geometry::{nms, BoundingBox, Detection};
use guardscan_core::hog::{compute_hog, hog_length, HogParams};
use guardscan_core::spacing::{build_ubiquity_table, select_best_combination, GmmComponent, GmmModel, UbiquityConfig};
use guardscan_core::synthgen::{render_facade, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn stages(c: &mut Criterion) {
    let scene = render_facade(&SynthConfig::default()).unwrap();
    let window = scene.image.crop(&scene.post_annotations[0]).unwrap();
    let hog = HogParams::default();
    c.bench_function("hog_32x64", |b| b.iter(|| compute_hog(black_box(&window), &hog).unwrap()));

    let dim = hog_length(32, 64, &hog).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let svm = WindowClassifier::Svm {
        model: LinearSvmModel {
            weights: (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect(),
            bias: -0.5,
            feature_dim: dim,
            train_config: SvmTrainConfig::default(),
        },
        hog,
        window: (32, 64),
    };
    let scan = ScanParams { stride_x: 8, stride_y: 8, ..ScanParams::default() };
    c.bench_function("svm_scan_640x400_stride8", |b| b.iter(|| detect(black_box(&scene.image), &svm, &scan).unwrap()));

    c.bench_function("detect_floors_640x400", |b| b.iter(|| detect_floors(black_box(&scene.image), &FloorConfig::default())));

    let dets: Vec<Detection> = (0..2000)
        .map(|_| {
            let bx = BoundingBox::new(rng.random_range(0..600), rng.random_range(0..340), 32, 64);
            Detection::new(bx, rng.random_range(0.0..1.0))
        })
        .collect();
    c.bench_function("nms_2000", |b| b.iter(|| nms(black_box(&dets), 0.3)));

    let model = GmmModel { components: vec![GmmComponent { weight: 1.0, mean: 1.0, variance: 0.01 }] };
    let table = build_ubiquity_table(&model, &UbiquityConfig::default()).unwrap();
    let row: Vec<Detection> = (0..40)
        .map(|i| Detection::new(BoundingBox::new(i * 30 + rng.random_range(0..10), 0, 32, 64), rng.random_range(0.0..1.0)))
        .collect();
    c.bench_function("spacing_dp_40", |b| b.iter(|| select_best_combination(black_box(&row), &table)));
}

criterion_group!(benches, stages);
criterion_main!(benches);
