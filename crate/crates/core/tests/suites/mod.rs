//! Acceptance checks for criteria 1–7, written once and run both by the
//! core integration tests (`tests/criteria.rs`) and by the CLI acceptance
//! runner. Each check returns a short summary or a failure description.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use guardscan_core::classifiers::cascade::{cascade_classify_with_probe, CascadeOutcome};
use guardscan_core::classifiers::{
    train_cascade, train_linear_svm_traced, CascadeTrainConfig, LabeledSet, SvmTrainConfig,
};
use guardscan_core::floors::{detect_floors, filter_by_floor, FloorConfig, FloorLine};
use guardscan_core::geometry::{iou, nms, BoundingBox, Detection};
use guardscan_core::hog::{compute_hog, hog_length, HogParams};
use guardscan_core::image::Image;
use guardscan_core::spacing::{
    build_ubiquity_table, fit_gmm_em, select_best_combination_scored, select_k_bic, GmmComponent,
    GmmConfig, GmmModel, UbiquityConfig, UbiquityTable,
};
use guardscan_core::synthgen::{render_facade, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Runs `f` and fails it when it exceeds `limit`.
pub fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let out = f()?;
    let took = start.elapsed();
    ensure!(took < limit, "took {:.1}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(format!("{out} ({:.2}s)", took.as_secs_f64()))
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(rng.random_range(0..60), rng.random_range(0..60), rng.random_range(1..40), rng.random_range(1..40))
}

/// Criterion 1: IOU and NMS exact examples plus 1000 randomized properties.
pub fn c1_geometry() -> Check {
    let a = BoundingBox::new(0, 0, 10, 10);
    ensure!(iou(&a, &a) == 1.0, "iou(a, a) != 1");
    ensure!(iou(&a, &BoundingBox::new(5, 0, 10, 10)) == 50.0 / 150.0, "half-overlap IOU");
    ensure!(iou(&a, &BoundingBox::new(10, 0, 10, 10)) == 0.0, "touching boxes overlap");
    let kept = nms(&[Detection::new(a, 0.9), Detection::new(BoundingBox::new(1, 0, 10, 10), 0.8)], 0.5);
    ensure!(kept == vec![Detection::new(a, 0.9)], "NMS kept {kept:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let v = iou(&a, &b);
        ensure!(v == iou(&b, &a) && (0.0..=1.0).contains(&v), "case {case}: iou {v} not symmetric/bounded");
        ensure!((v > 0.0) == (a.intersection_area(&b) > 0), "case {case}: iou sign vs intersection");

        let n = rng.random_range(0..15);
        let dets: Vec<Detection> =
            (0..n).map(|_| Detection::new(random_box(&mut rng), rng.random_range(0.0..1.0))).collect();
        // quarter steps make exact-threshold overlaps (e.g. IOU 0.5) reachable
        let thr = if case % 2 == 0 { rng.random_range(0.1..0.9) } else { f64::from(rng.random_range(1..4)) * 0.25 };
        let kept = nms(&dets, thr);
        ensure!(kept.iter().all(|k| dets.contains(k)), "case {case}: NMS invented a box");
        for (i, p) in kept.iter().enumerate() {
            for q in &kept[i + 1..] {
                ensure!(iou(&p.bbox, &q.bbox) < thr, "case {case}: kept boxes overlap at or above threshold");
            }
        }
        if let Some(top) = dets.iter().max_by(|p, q| p.score.total_cmp(&q.score)) {
            ensure!(kept.iter().any(|k| k.score == top.score), "case {case}: top-scoring box dropped");
        }
        // every suppressed box overlaps a kept box of at least its score
        for d in dets.iter().filter(|d| !kept.contains(d)) {
            ensure!(
                kept.iter().any(|k| k.score >= d.score && iou(&k.bbox, &d.bbox) >= thr),
                "case {case}: box suppressed without a cause"
            );
        }
        ensure!(nms(&kept, thr).len() == kept.len(), "case {case}: NMS not idempotent");
    }
    Ok("exact examples + 1000 random cases".into())
}

fn textured(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(w, h, |_, _| rng.random_range(0.0..1.0))
}

/// Criterion 2: zero descriptor on a constant window, the length formula on
/// 100 parameterizations, and ε=0 intensity-scale invariance.
pub fn c2_hog() -> Check {
    let p = HogParams::default();
    let d = compute_hog(&Image::filled(32, 64, 0.4), &p).map_err(|e| e.to_string())?;
    ensure!(d.values.iter().all(|v| *v == 0.0), "constant window has a non-zero descriptor");

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 100 {
        let cell = rng.random_range(2..9usize);
        let (cx, cy) = (rng.random_range(1..7usize), rng.random_range(1..9usize));
        let block = rng.random_range(1..=cx.min(cy));
        let params = HogParams {
            cell_size: cell,
            block_size: block,
            block_stride: rng.random_range(1..=block),
            bins: rng.random_range(2..13),
            normalization_epsilon: 1e-6,
        };
        let (w, h) = (cx * cell, cy * cell);
        if w < 3 || h < 3 {
            continue;
        }
        let l = params.layout(w, h).map_err(|e| e.to_string())?;
        let expected = l.blocks_x * l.blocks_y * block * block * params.bins;
        let got = compute_hog(&textured(w, h, &mut rng), &params).map_err(|e| e.to_string())?.len();
        ensure!(got == expected && hog_length(w, h, &params).ok() == Some(expected), "length mismatch for {params:?} on {w}x{h}");
        checked += 1;
    }

    let p0 = HogParams { normalization_epsilon: 0.0, ..HogParams::default() };
    for k in [0.5, 0.25, 0.8] {
        let win = textured(32, 64, &mut rng);
        let a = compute_hog(&win, &p0).map_err(|e| e.to_string())?;
        let b = compute_hog(&win.scaled(k), &p0).map_err(|e| e.to_string())?;
        let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure!(worst <= 1e-9, "scaling by {k} moved the descriptor by {worst:e}");
    }
    Ok("zero descriptor, 100 length checks, scale invariance".into())
}

fn gaussian_blobs(seed: u64, n: usize, gap: f64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = LabeledSet::default();
    for i in 0..n {
        let y: i8 = if i % 2 == 0 { 1 } else { -1 };
        let c = f64::from(y) * gap;
        set.push(vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)], y);
    }
    set
}

/// Criterion 3: two-point max margin, separable set, monotone dual objective.
pub fn c3_svm() -> Check {
    let two = LabeledSet::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1, -1]).map_err(|e| e.to_string())?;
    let cfg = SvmTrainConfig { c: 10.0, ..SvmTrainConfig::default() };
    let (m, _) = train_linear_svm_traced(&two, &cfg).map_err(|e| e.to_string())?;
    ensure!(m.bias.abs() < 1e-3, "two-point bias {}", m.bias);
    let angle = m.weights[1].atan2(m.weights[0]).to_degrees().abs();
    ensure!(angle < 1.0 && m.weights[0] > 0.0, "weight direction {angle:.3}° off the x-axis");

    let sep = gaussian_blobs(3, 200, 2.0);
    let (m, trace) = train_linear_svm_traced(&sep, &SvmTrainConfig { c: 10.0, ..SvmTrainConfig::default() })
        .map_err(|e| e.to_string())?;
    let errors = sep
        .features
        .iter()
        .zip(&sep.labels)
        .filter(|(x, y)| m.score(x).unwrap() * f64::from(**y) <= 0.0)
        .count();
    ensure!(errors == 0, "{errors} training errors on the separable set");

    for seed in 0..5 {
        let noisy = gaussian_blobs(10 + seed, 300, 0.6);
        let (_, trace) = train_linear_svm_traced(&noisy, &SvmTrainConfig { c: 1.0, seed, ..SvmTrainConfig::default() })
            .map_err(|e| e.to_string())?;
        for w in trace.dual_objective.windows(2) {
            ensure!(w[1] <= w[0] + 1e-9, "dual objective rose from {} to {}", w[0], w[1]);
        }
    }
    Ok(format!("two-point + separable ({} epochs) + monotone objective", trace.epochs))
}

/// Positive post windows and a negative pool cut from a few facades.
fn facade_windows(n: u64) -> (Vec<Image>, Vec<Image>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        let scene = render_facade(&SynthConfig { seed: 100 + i, ..SynthConfig::default() }).unwrap();
        let mut exclude = scene.post_annotations.clone();
        exclude.extend(&scene.distractors);
        for b in &scene.post_annotations {
            pos.push(scene.image.crop(b).unwrap());
        }
        for y in (0..=scene.image.height() - 64).step_by(16) {
            for x in (0..=scene.image.width() - 32).step_by(16) {
                let b = BoundingBox::new(x as i32, y as i32, 32, 64);
                if exclude.iter().all(|e| iou(e, &b) < 0.3) {
                    neg.push(scene.image.crop(&b).unwrap());
                }
            }
        }
    }
    (pos, neg)
}

/// Criterion 4: pool false-positive rate non-increasing over stages, every
/// stage FPR within the target, and early exit skips later stages.
pub fn c4_cascade() -> Check {
    let (pos, neg) = facade_windows(4);
    let cfg = CascadeTrainConfig::default();
    let (model, report) = train_cascade(&pos, &neg, &cfg).map_err(|e| e.to_string())?;
    ensure!(!report.stages.is_empty(), "no stages trained");
    let mut last = 1.0;
    for (k, s) in report.stages.iter().enumerate() {
        ensure!(s.false_positive_rate <= cfg.max_fp_rate, "stage {k} FPR {} > {}", s.false_positive_rate, cfg.max_fp_rate);
        ensure!(s.pool_false_positive_rate <= last, "pool FPR rose at stage {k}");
        last = s.pool_false_positive_rate;
    }

    // Surviving windows shrink stage by stage when counted directly.
    let mut survivors = vec![0usize; model.stages.len() + 1];
    let mut early_exits = 0;
    for w in &neg {
        let mut probed = Vec::new();
        let out = cascade_classify_with_probe(&model, w, |k| probed.push(k)).map_err(|e| e.to_string())?;
        let reached = match out {
            CascadeOutcome::Rejected { stage } => {
                ensure!(probed == (0..=stage).collect::<Vec<_>>(), "rejected at {stage} but probed {probed:?}");
                if stage + 1 < model.stages.len() {
                    early_exits += 1;
                }
                stage
            }
            CascadeOutcome::Accepted { .. } => {
                ensure!(probed.len() == model.stages.len(), "accepted without visiting every stage");
                model.stages.len()
            }
        };
        for s in survivors.iter_mut().take(reached + 1) {
            *s += 1;
        }
    }
    ensure!(survivors.windows(2).all(|p| p[1] <= p[0]), "survivor counts not monotone: {survivors:?}");
    ensure!(model.stages.len() < 2 || early_exits > 0, "no window exited early");
    Ok(format!("{} stages, survivors {:?}, {early_exits} early exits", model.stages.len(), survivors))
}

fn mixture(parts: &[(f64, f64, f64)]) -> GmmModel {
    GmmModel { components: parts.iter().map(|&(weight, mean, sd)| GmmComponent { weight, mean, variance: sd * sd }).collect() }
}

fn draw(model: &GmmModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| model.sample(&mut rng)).collect()
}

/// Criterion 5: monotone EM log-likelihood over 50 fits, 2-component
/// recovery within 0.05, and BIC choosing k=3.
pub fn c5_em() -> Check {
    let truth = mixture(&[(0.5, 1.0, 0.1), (0.3, 2.0, 0.15), (0.2, 3.0, 0.1)]);
    for fit_no in 0..50u64 {
        let xs = draw(&truth, 200, fit_no);
        let k = 1 + (fit_no as usize % 4);
        let fit = fit_gmm_em(&xs, k, &GmmConfig { seed: fit_no, ..GmmConfig::default() }).map_err(|e| e.to_string())?;
        for w in fit.history.windows(2) {
            ensure!(w[1] >= w[0] - 1e-9, "fit {fit_no} (k={k}): log-likelihood fell {} -> {}", w[0], w[1]);
        }
    }

    let two = mixture(&[(0.6, 1.0, 0.1), (0.4, 2.5, 0.2)]);
    let fit = fit_gmm_em(&draw(&two, 2000, 99), 2, &GmmConfig::default()).map_err(|e| e.to_string())?;
    let mut means: Vec<f64> = fit.model.components.iter().map(|c| c.mean).collect();
    means.sort_by(f64::total_cmp);
    ensure!((means[0] - 1.0).abs() < 0.05 && (means[1] - 2.5).abs() < 0.05, "2-component means {means:?}");

    let sel = select_k_bic(&draw(&truth, 1500, 7), &[1, 2, 3, 4, 5], &GmmConfig::default()).map_err(|e| e.to_string())?;
    ensure!(sel.k == 3, "BIC picked k={}", sel.k);
    Ok(format!("50 monotone fits, means {means:.3?}, BIC k=3"))
}

fn dp_table(rng: &mut ChaCha8Rng) -> UbiquityTable {
    let model = mixture(&[(0.7, 1.0, rng.random_range(0.05..0.2)), (0.3, 2.0, rng.random_range(0.1..0.3))]);
    let cfg = UbiquityConfig { tau_fraction: rng.random_range(0.05..0.6), ..UbiquityConfig::default() };
    build_ubiquity_table(&model, &cfg).unwrap()
}

/// Exhaustive reference for the chain objective: best over subsets of two
/// or more detections sorted by center x, normalized by the median of all
/// consecutive candidate spacings.
fn brute_force(dets: &[Detection], table: &UbiquityTable) -> f64 {
    let mut xs: Vec<f64> = dets.iter().map(|d| d.bbox.center_x()).collect();
    xs.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let g = gaps.len();
    let m = if g % 2 == 1 { gaps[g / 2] } else { 0.5 * (gaps[g / 2 - 1] + gaps[g / 2]) };
    let n = xs.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() < 2 {
            continue;
        }
        let chosen: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| xs[i]).collect();
        let obj: f64 = chosen.windows(2).map(|p| table.lookup((p[1] - p[0]) / m)).sum();
        best = best.max(obj);
    }
    best
}

/// Criterion 6: the DP optimum equals brute force on 500 instances, n ≤ 12.
pub fn c6_dp() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fallbacks = 0;
    for case in 0..500 {
        let table = dp_table(&mut rng);
        let n = rng.random_range(2..=12);
        let mut x = 0;
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                x += rng.random_range(5..120);
                Detection::new(BoundingBox::new(x, 0, 32, 64), rng.random_range(0.0..1.0))
            })
            .collect();
        let sel = select_best_combination_scored(&dets, &table);
        let brute = brute_force(&dets, &table);
        if brute > 0.0 {
            ensure!((sel.objective - brute).abs() <= 1e-9, "case {case}: DP {} vs brute force {brute}", sel.objective);
            let m = sel.median_spacing.unwrap();
            let got: f64 = sel
                .selected
                .windows(2)
                .map(|p| table.lookup((p[1].bbox.center_x() - p[0].bbox.center_x()) / m))
                .sum();
            ensure!((got - brute).abs() <= 1e-9, "case {case}: returned chain scores {got}, optimum {brute}");
        } else {
            fallbacks += 1;
            let top = dets.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
            ensure!(sel.selected.len() == 1 && sel.selected[0].score == top, "case {case}: fallback is not the top-scoring detection");
        }
    }
    Ok(format!("500 instances agree ({fallbacks} fallbacks)"))
}

/// Criterion 7: detected floors match the truth within 3 px on 20
/// noise-free facades, and the filter removes exactly the boxes more than
/// `max_dist` from every floor.
pub fn c7_floors() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let synth = SynthConfig { seed: 500 + i, noise_sigma: 0.0, ..SynthConfig::default() };
        let scene = render_facade(&synth).map_err(|e| e.to_string())?;
        let cfg = FloorConfig { k: scene.true_floor_lines.len() + 2, ..FloorConfig::default() };
        let found = detect_floors(&scene.image, &cfg);
        let mid = scene.image.width() as f64 / 2.0;
        for t in &scene.true_floor_lines {
            let d = found.iter().map(|f| (f.y_at(mid) - t.y_at(mid)).abs()).fold(f64::INFINITY, f64::min);
            ensure!(d <= 3.0, "facade {i}: floor at y={:.1} unmatched (nearest {d:.1} px)", t.y_at(mid));
            worst = worst.max(d);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let floors: Vec<FloorLine> = (0..rng.random_range(1..4))
            .map(|_| FloorLine {
                slope: rng.random_range(-0.05..0.05),
                intercept: rng.random_range(50.0..350.0),
                coverage: 100.0,
                support: 1,
            })
            .collect();
        let dets: Vec<Detection> = (0..30)
            .map(|_| {
                let b = BoundingBox::new(rng.random_range(0..600), rng.random_range(0..340), 32, 64);
                Detection::new(b, rng.random_range(0.0..1.0))
            })
            .collect();
        let kept = filter_by_floor(&dets, &floors, 10.0);
        let expected: Vec<Detection> = dets
            .iter()
            .copied()
            .filter(|d| floors.iter().any(|f| f.distance_to_box_bottom(&d.bbox) <= 10.0))
            .collect();
        ensure!(kept == expected, "case {case}: filter kept {} boxes, expected {}", kept.len(), expected.len());
    }
    Ok(format!("20 facades, worst floor error {worst:.2} px; filter exact on 200 cases"))
}

/// Generator check: full-row post spacings follow the configured spacing
/// model after rounding, by a KS test at the 1% level.
pub fn synthgen_spacing_ks() -> Check {
    let cfg = SynthConfig::default();
    let comp = &cfg.spacing_model.components[0];
    let normal = Normal::new(comp.mean, comp.variance.sqrt()).unwrap();
    let mut gaps = Vec::new();
    for i in 0..40 {
        let scene = render_facade(&SynthConfig { seed: 1000 + i, ..cfg.clone() }).map_err(|e| e.to_string())?;
        let mut all = scene.post_annotations.clone();
        all.extend(&scene.removed_posts);
        for floor in &scene.true_floor_lines {
            let mut xs: Vec<i32> = all
                .iter()
                .filter(|b| floor.distance_to_box_bottom(b) <= 2.0)
                .map(|b| b.x)
                .collect();
            xs.sort_unstable();
            gaps.extend(xs.windows(2).map(|p| i64::from(p[1] - p[0])));
        }
    }
    gaps.sort_unstable();
    let n = gaps.len() as f64;
    // P(round(base * s) <= m) for the discretized null
    let null = |m: i64| normal.cdf((m as f64 + 0.5) / cfg.base_spacing);
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < gaps.len() {
        let m = gaps[i];
        let below = i as f64 / n;
        while i < gaps.len() && gaps[i] == m {
            i += 1;
        }
        d = d.max((i as f64 / n - null(m)).abs()).max((below - null(m - 1)).abs());
    }
    let crit = 1.628 / n.sqrt();
    ensure!(d < crit, "KS statistic {d:.4} >= {crit:.4} on {n} gaps");
    Ok(format!("KS D={d:.4} < {crit:.4} over {n} gaps"))
}
