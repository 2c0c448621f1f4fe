//! Glue between the dataset and the modules: training-set construction,
//! detector training, spacing-model fitting, and the per-image stage runner
//! used by `pipeline` and `eval`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classifiers::{
    grid_search_cv, train_cascade, train_linear_svm, CascadeTrainReport, CroppedWindows, GridSearchResult, LabeledSet,
    WindowClassifier,
};
use crate::config::PipelineConfig;
use crate::detector::{detect, detect_raw, sliding_windows, ScanParams};
use crate::error::{Error, Result};
use crate::eval::{match_detections, table7_rows, ClassifierKind, EvalReport, ImageEval, StageSet};
use crate::floors::{detect_floors, filter_by_floor, group_by_floor, FloorLine};
use crate::geometry::{iou, BoundingBox, Detection};
use crate::hog::compute_hog;
use crate::image::{to_grayscale, Image};
use crate::spacing::{
    build_ubiquity_table, normalized_spacings, select_best_combination, select_k_bic, BicSelection, SpacingModel,
};
use crate::synthgen::{Dataset, Split};

/// A grayscale dataset image with the boxes that matter for sampling.
pub struct LabeledImage {
    pub name: String,
    pub image: Image,
    pub posts: Vec<BoundingBox>,
    /// Posts and post-like distractors: negatives must stay clear of these.
    pub exclude: Vec<BoundingBox>,
}

pub fn load_split(ds: &Dataset, split: Split) -> Result<Vec<LabeledImage>> {
    ds.records(split)
        .into_par_iter()
        .map(|r| {
            let mut exclude = r.posts.clone();
            exclude.extend(&r.distractors);
            Ok(LabeledImage { name: r.image.clone(), image: to_grayscale(&ds.image(r)?), posts: r.posts.clone(), exclude })
        })
        .collect()
}

fn max_iou(b: &BoundingBox, others: &[BoundingBox]) -> f64 {
    others.iter().map(|o| iou(b, o)).fold(0.0, f64::max)
}

/// Annotated post windows (and their mirror images) of the window size.
pub fn positive_windows(imgs: &[LabeledImage], size: (usize, usize), flip: bool) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for li in imgs {
        for b in &li.posts {
            if (b.w as usize, b.h as usize) != size || !b.fits_in(li.image.width(), li.image.height()) {
                log::warn!("{}: skipping post {:?} (not a {}x{} window inside the image)", li.name, b, size.0, size.1);
                continue;
            }
            let w = li.image.crop(b)?;
            if flip {
                out.push(w.flip_horizontal());
            }
            out.push(w);
        }
    }
    Ok(out)
}

/// Uniformly placed windows overlapping no excluded box by `max_iou` or more.
pub fn random_negative_boxes(
    imgs: &[LabeledImage],
    size: (usize, usize),
    per_image: usize,
    max_overlap: f64,
    seed: u64,
) -> Vec<(usize, BoundingBox)> {
    let mut out = Vec::new();
    for (i, li) in imgs.iter().enumerate() {
        let (w, h) = (li.image.width(), li.image.height());
        if size.0 > w || size.1 > h {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut found = 0;
        let mut attempts = 0;
        while found < per_image && attempts < per_image * 50 {
            attempts += 1;
            let b = BoundingBox::new(
                rng.random_range(0..=(w - size.0)) as i32,
                rng.random_range(0..=(h - size.1)) as i32,
                size.0 as i32,
                size.1 as i32,
            );
            if max_iou(&b, &li.exclude) < max_overlap {
                out.push((i, b));
                found += 1;
            }
        }
    }
    out
}

/// Every sliding window at `stride` overlapping no excluded box by `max_iou` or more.
pub fn pool_boxes(imgs: &[LabeledImage], size: (usize, usize), stride: usize, max_overlap: f64) -> Vec<(usize, BoundingBox)> {
    let p = ScanParams { window_w: size.0, window_h: size.1, stride_x: stride, stride_y: stride, ..ScanParams::default() };
    let mut out = Vec::new();
    for (i, li) in imgs.iter().enumerate() {
        for b in sliding_windows(li.image.width(), li.image.height(), &p) {
            if max_iou(&b, &li.exclude) < max_overlap {
                out.push((i, b));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SvmTrainSummary {
    pub grid: GridSearchResult,
    pub positives: usize,
    pub negatives: usize,
    /// Hard negatives added in each mining round.
    pub hard_negatives: Vec<usize>,
}

fn hog_features(windows: &[Image], cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
    windows.par_iter().map(|w| Ok(compute_hog(w, &cfg.svm.hog)?.values)).collect()
}

/// Grid-searched linear SVM on HOG features, refined by hard-negative rounds.
pub fn train_svm_detector(train: &[LabeledImage], cfg: &PipelineConfig) -> Result<(WindowClassifier, SvmTrainSummary)> {
    let size = (cfg.scan.window_w, cfg.scan.window_h);
    let pos = positive_windows(train, size, cfg.sampling.flip_positives)?;
    let neg_boxes = random_negative_boxes(
        train,
        size,
        cfg.sampling.negatives_per_image,
        cfg.sampling.negative_max_iou,
        cfg.sampling.seed,
    );
    let images: Vec<Image> = train.iter().map(|l| l.image.clone()).collect();
    let neg: Vec<Image> =
        neg_boxes.iter().map(|(i, b)| images[*i].crop(b)).collect::<Result<_>>()?;
    let mut features = hog_features(&pos, cfg)?;
    let mut labels = vec![1i8; features.len()];
    features.extend(hog_features(&neg, cfg)?);
    labels.resize(features.len(), -1);
    let mut data = LabeledSet::new(features, labels)?;
    let (positives, negatives) = (pos.len(), neg.len());

    log::info!("svm training set: {positives} positives, {negatives} negatives");
    let grid = grid_search_cv(&data, &cfg.svm.c_grid, cfg.svm.folds, cfg.svm.train.seed, &cfg.svm.train)?;
    log::info!("svm grid search: best C = {}", grid.best_c);
    let train_cfg = crate::classifiers::SvmTrainConfig { c: grid.best_c, ..cfg.svm.train };
    let wrap = |model| WindowClassifier::Svm { model, hog: cfg.svm.hog, window: size };
    let mut clf = wrap(train_linear_svm(&data, &train_cfg)?);

    let mut hard_counts = Vec::new();
    for round in 0..cfg.svm.hard_negative_rounds {
        let scan = ScanParams { score_threshold: 0.0, ..cfg.scan };
        let mined: Vec<Vec<Image>> = train
            .iter()
            .map(|li| {
                let mut fps: Vec<Detection> = detect_raw(&li.image, &clf, &scan)?
                    .into_iter()
                    .filter(|d| max_iou(&d.bbox, &li.exclude) < cfg.sampling.negative_max_iou)
                    .collect();
                fps.sort_by(crate::geometry::by_score_desc);
                fps.truncate(cfg.svm.hard_negatives_per_image);
                fps.iter().map(|d| li.image.crop(&d.bbox)).collect()
            })
            .collect::<Result<_>>()?;
        let mined: Vec<Image> = mined.into_iter().flatten().collect();
        log::info!("svm hard-negative round {round}: {} windows", mined.len());
        hard_counts.push(mined.len());
        if mined.is_empty() {
            break;
        }
        for f in hog_features(&mined, cfg)? {
            data.push(f, -1);
        }
        clf = wrap(train_linear_svm(&data, &train_cfg)?);
    }
    Ok((clf, SvmTrainSummary { grid, positives, negatives, hard_negatives: hard_counts }))
}

#[derive(Clone, Debug, Serialize)]
pub struct CascadeTrainSummary {
    pub report: CascadeTrainReport,
    pub positives: usize,
    pub pool: usize,
}

/// Cascade of boosted stump stages; negatives come from a sliding-window pool.
pub fn train_cascade_detector(
    train: &[LabeledImage],
    cfg: &PipelineConfig,
) -> Result<(WindowClassifier, CascadeTrainSummary)> {
    let size = (cfg.scan.window_w, cfg.scan.window_h);
    let pos = positive_windows(train, size, cfg.sampling.flip_positives)?;
    let images: Vec<Image> = train.iter().map(|l| l.image.clone()).collect();
    let pool = CroppedWindows::new(&images, pool_boxes(train, size, cfg.cascade.pool_stride, cfg.cascade.pool_max_iou))?;
    let (model, report) = train_cascade(&pos, &pool, &cfg.cascade.train)?;
    Ok((WindowClassifier::Cascade(model), CascadeTrainSummary { report, positives: pos.len(), pool: pool.boxes.len() }))
}

/// Floor lines for a dataset image: the recorded truth when present, else detected.
fn floors_for_spacing(ds: &Dataset, name: &str, image: &Image, cfg: &PipelineConfig) -> Vec<FloorLine> {
    match ds.true_floors(name) {
        Some(f) if !f.is_empty() => f.to_vec(),
        _ => detect_floors(image, &cfg.floors),
    }
}

#[derive(Clone, Debug)]
pub struct SpacingFit {
    pub model: SpacingModel,
    pub selection: BicSelection,
    pub samples: Vec<f64>,
}

/// Fit the spacing mixture (k by BIC) to annotated posts of the training split.
pub fn fit_spacing_model(ds: &Dataset, train: &[LabeledImage], cfg: &PipelineConfig) -> Result<SpacingFit> {
    let mut groups = Vec::new();
    for li in train {
        let floors = floors_for_spacing(ds, &li.name, &li.image, cfg);
        for g in group_by_floor(&li.posts, &floors, cfg.floors.max_dist) {
            groups.push(g.into_iter().map(|i| li.posts[i]).collect::<Vec<_>>());
        }
    }
    let samples = normalized_spacings(&groups);
    let selection = select_k_bic(&samples, &cfg.spacing.k_range, &cfg.spacing.gmm)?;
    let table = build_ubiquity_table(&selection.model, &cfg.spacing.ubiquity)?;
    Ok(SpacingFit { model: SpacingModel { gmm: selection.model.clone(), table }, selection, samples })
}

/// Detections after each cumulative stage for one image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageOutputs {
    pub raw: Vec<Detection>,
    pub floor: Vec<Detection>,
    pub spacing: Vec<Detection>,
}

impl StageOutputs {
    pub fn get(&self, stage: StageSet) -> &[Detection] {
        match stage {
            StageSet::Classifier => &self.raw,
            StageSet::FloorFilter => &self.floor,
            StageSet::SpacingSelect => &self.spacing,
        }
    }
}

/// Per floor, keep the most plausible chain of detections. Detections not
/// near any floor are dropped; with no floors the input is returned.
pub fn apply_spacing(dets: &[Detection], floors: &[FloorLine], max_dist: f64, model: &SpacingModel) -> Vec<Detection> {
    if floors.is_empty() {
        log::warn!("no floors; spacing selection skipped");
        return dets.to_vec();
    }
    let boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
    let mut out: Vec<Detection> = group_by_floor(&boxes, floors, max_dist)
        .into_iter()
        .flat_map(|g| {
            let on_floor: Vec<Detection> = g.into_iter().map(|i| dets[i]).collect();
            select_best_combination(&on_floor, &model.table)
        })
        .collect();
    out.sort_by_key(|d| (d.bbox.y, d.bbox.x, d.bbox.w, d.bbox.h));
    out
}

/// detect → filter_by_floor → select_best_combination on one image.
pub fn run_stages(
    img: &Image,
    clf: &WindowClassifier,
    floors: &[FloorLine],
    cfg: &PipelineConfig,
    spacing: &SpacingModel,
) -> Result<StageOutputs> {
    let raw = detect(img, clf, &cfg.scan)?;
    let floor = filter_by_floor(&raw, floors, cfg.floors.max_dist);
    let spacing = apply_spacing(&floor, floors, cfg.floors.max_dist, spacing);
    Ok(StageOutputs { raw, floor, spacing })
}

/// Everything computed for one test image during evaluation.
#[derive(Clone, Debug)]
pub struct ImageResult {
    pub name: String,
    pub floors: Vec<FloorLine>,
    pub ground_truth: Vec<BoundingBox>,
    pub outputs: Vec<(ClassifierKind, StageOutputs)>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Rows in Table 7 order, restricted to the requested classifiers and stages.
    pub rows: Vec<EvalReport>,
    pub images: Vec<ImageResult>,
}

/// Run every requested classifier over the test split and score the
/// requested stage combinations (micro-averaged over images).
pub fn evaluate_pipeline(
    ds: &Dataset,
    models: &[(ClassifierKind, &WindowClassifier)],
    stages: &[StageSet],
    cfg: &PipelineConfig,
    spacing: &SpacingModel,
) -> Result<Evaluation> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("no classifier to evaluate".into()));
    }
    let test = load_split(ds, Split::Test)?;
    if test.is_empty() {
        return Err(Error::InvalidParameter("dataset has no test images".into()));
    }
    let images: Vec<ImageResult> = test
        .par_iter()
        .map(|li| {
            let floors = detect_floors(&li.image, &cfg.floors);
            let outputs = models
                .iter()
                .map(|(k, clf)| Ok((*k, run_stages(&li.image, clf, &floors, cfg, spacing)?)))
                .collect::<Result<_>>()?;
            Ok(ImageResult { name: li.name.clone(), floors, ground_truth: li.posts.clone(), outputs })
        })
        .collect::<Result<_>>()?;

    let rows = table7_rows()
        .into_iter()
        .filter(|(k, s)| stages.contains(s) && models.iter().any(|(m, _)| m == k))
        .map(|(kind, stage)| {
            let per_image = images
                .iter()
                .map(|r| {
                    let dets = r.outputs.iter().find(|(k, _)| *k == kind).unwrap().1.get(stage);
                    let m = match_detections(dets, &r.ground_truth, cfg.eval.iou_threshold);
                    ImageEval {
                        image: r.name.clone(),
                        counts: m.counts,
                        detections: dets.len(),
                        ground_truth: r.ground_truth.len(),
                    }
                })
                .collect();
            EvalReport::from_images(kind, stage, per_image)
        })
        .collect();
    Ok(Evaluation { rows, images })
}
