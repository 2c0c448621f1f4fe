//! Attentional cascade: an ordered list of boosted stages, each a weighted
//! vote of decision stumps over that stage's HOG features. A window is
//! rejected at the first stage whose vote falls below the stage threshold.
//!
//! Each stage is grown by discrete AdaBoost until, at the largest threshold
//! that keeps the required detection rate on the positives, the stage
//! passes at most the allowed fraction of the current negatives. Negatives
//! that survive a stage are the training negatives of the next one.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WindowSource;
use crate::error::{Error, Result};
use crate::hog::{compute_hog, hog_length, HogParams};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// `+1`: fires when the feature is above the threshold; `-1`: below.
    pub polarity: i8,
    pub weight: f64,
}

impl Stump {
    #[inline]
    pub fn fires(&self, x: &[f64]) -> bool {
        if self.polarity > 0 {
            x[self.feature] > self.threshold
        } else {
            x[self.feature] < self.threshold
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub weak_learners: Vec<Stump>,
    pub stage_threshold: f64,
    pub hog_params: HogParams,
}

impl Stage {
    pub fn vote(&self, x: &[f64]) -> f64 {
        self.weak_learners.iter().filter(|s| s.fires(x)).map(|s| s.weight).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeModel {
    pub window_width: usize,
    pub window_height: usize,
    pub stages: Vec<Stage>,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::ModelFormat("cascade has no stages".into()));
        }
        for (k, stage) in self.stages.iter().enumerate() {
            let len = hog_length(self.window_width, self.window_height, &stage.hog_params)?;
            if stage.weak_learners.is_empty() {
                return Err(Error::ModelFormat(format!("stage {k} has no weak learners")));
            }
            if !stage.stage_threshold.is_finite() {
                return Err(Error::ModelFormat(format!("stage {k} threshold is not finite")));
            }
            for s in &stage.weak_learners {
                if s.feature >= len || !s.threshold.is_finite() || !s.weight.is_finite() {
                    return Err(Error::ModelFormat(format!("stage {k} has an invalid stump {s:?}")));
                }
                if s.polarity != 1 && s.polarity != -1 {
                    return Err(Error::ModelFormat(format!("stump polarity {}", s.polarity)));
                }
            }
            if k > 0 {
                let prev = &self.stages[k - 1];
                if stage.weak_learners.len() < prev.weak_learners.len() {
                    return Err(Error::ModelFormat(format!("stage {k} has fewer stumps than stage {}", k - 1)));
                }
                if stage.hog_params.cell_size > prev.hog_params.cell_size {
                    return Err(Error::ModelFormat(format!("stage {k} uses coarser cells than stage {}", k - 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CascadeOutcome {
    /// Passed every stage; `margin` is the last stage's vote minus its threshold.
    Accepted { margin: f64 },
    Rejected { stage: usize },
}

impl CascadeOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, CascadeOutcome::Accepted { .. })
    }
}

pub fn cascade_classify(model: &CascadeModel, window: &Image) -> Result<CascadeOutcome> {
    cascade_classify_with_probe(model, window, |_| {})
}

/// As [`cascade_classify`], calling `probe(stage)` before each stage is evaluated.
pub fn cascade_classify_with_probe(
    model: &CascadeModel,
    window: &Image,
    probe: impl FnMut(usize),
) -> Result<CascadeOutcome> {
    if (window.width(), window.height()) != (model.window_width, model.window_height) {
        return Err(Error::DimensionMismatch(format!(
            "window {}x{} vs cascade {}x{}",
            window.width(),
            window.height(),
            model.window_width,
            model.window_height
        )));
    }
    cascade_classify_features(model, |p| Ok(compute_hog(window, p)?.values), probe)
}

/// Stage loop over a feature provider; consecutive stages sharing HOG
/// parameters reuse one descriptor.
pub(crate) fn cascade_classify_features(
    model: &CascadeModel,
    mut features_for: impl FnMut(&HogParams) -> Result<Vec<f64>>,
    mut probe: impl FnMut(usize),
) -> Result<CascadeOutcome> {
    let mut cached: Option<(HogParams, Vec<f64>)> = None;
    let mut margin = 0.0;
    for (k, stage) in model.stages.iter().enumerate() {
        probe(k);
        let features = match &cached {
            Some((p, f)) if *p == stage.hog_params => f,
            _ => &cached.insert((stage.hog_params, features_for(&stage.hog_params)?)).1,
        };
        margin = stage.vote(features) - stage.stage_threshold;
        if margin < 0.0 {
            return Ok(CascadeOutcome::Rejected { stage: k });
        }
    }
    Ok(CascadeOutcome::Accepted { margin })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeTrainConfig {
    pub stages_max: usize,
    pub min_detection_rate: f64,
    pub max_fp_rate: f64,
    /// HOG parameters per stage; stages past the end reuse the last entry.
    pub hog_schedule: Vec<HogParams>,
    pub max_stumps_per_stage: usize,
    pub max_negatives_per_stage: usize,
    pub seed: u64,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        let base = HogParams::default();
        Self {
            stages_max: 6,
            min_detection_rate: 0.995,
            max_fp_rate: 0.5,
            hog_schedule: vec![base.with_cell_size(16), base.with_cell_size(8), base.with_cell_size(8)],
            max_stumps_per_stage: 100,
            max_negatives_per_stage: 4000,
            seed: 0,
        }
    }
}

impl CascadeTrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.stages_max == 0 {
            return bad("stages_max must be positive");
        }
        if !(self.min_detection_rate > 0.0 && self.min_detection_rate <= 1.0) {
            return bad("min_detection_rate must lie in (0,1]");
        }
        if !(self.max_fp_rate > 0.0 && self.max_fp_rate < 1.0) {
            return bad("max_fp_rate must lie in (0,1)");
        }
        if self.hog_schedule.is_empty() {
            return bad("empty HOG schedule");
        }
        if self.hog_schedule.windows(2).any(|p| p[1].cell_size > p[0].cell_size) {
            return bad("HOG schedule must not coarsen cells across stages");
        }
        if self.max_stumps_per_stage == 0 || self.max_negatives_per_stage == 0 {
            return bad("stump and negative budgets must be positive");
        }
        Ok(())
    }

    fn params_for_stage(&self, k: usize) -> HogParams {
        self.hog_schedule[k.min(self.hog_schedule.len() - 1)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stumps: usize,
    pub positives: usize,
    pub negatives: usize,
    pub detection_rate: f64,
    /// Fraction of this stage's training negatives passed by the stage.
    pub false_positive_rate: f64,
    /// Fraction of the whole negative pool passed by stages `0..=k`.
    pub pool_false_positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CascadeTrainReport {
    pub stages: Vec<StageReport>,
}

/// Train a cascade from positive windows and a pool of negative windows.
pub fn train_cascade(
    pos: &dyn WindowSource,
    neg_pool: &dyn WindowSource,
    cfg: &CascadeTrainConfig,
) -> Result<(CascadeModel, CascadeTrainReport)> {
    cfg.validate()?;
    if pos.is_empty() || neg_pool.is_empty() {
        return Err(Error::SingleClass);
    }
    let first = pos.window(0)?;
    let (ww, wh) = (first.width(), first.height());
    for k in 0..cfg.stages_max.min(cfg.hog_schedule.len()) {
        hog_length(ww, wh, &cfg.params_for_stage(k))?;
    }

    let mut pos_cache: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();
    let mut pos_alive: Vec<usize> = (0..pos.len()).collect();
    let mut survivors: Vec<usize> = (0..neg_pool.len()).collect();
    let mut stages: Vec<Stage> = Vec::new();
    let mut reports = Vec::new();

    for k in 0..cfg.stages_max {
        if survivors.is_empty() {
            break;
        }
        let params = cfg.params_for_stage(k);
        let schedule_slot = k.min(cfg.hog_schedule.len() - 1);
        let slot = (0..=schedule_slot).find(|&j| cfg.hog_schedule[j] == params).unwrap();
        if !pos_cache.contains_key(&slot) {
            let all: Vec<usize> = (0..pos.len()).collect();
            pos_cache.insert(slot, features_for(pos, &all, &params, (ww, wh))?);
        }
        let pos_all = &pos_cache[&slot];

        let negs: Vec<usize> = if survivors.len() > cfg.max_negatives_per_stage {
            let mut pick = survivors.clone();
            pick.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64)));
            pick.truncate(cfg.max_negatives_per_stage);
            pick.sort_unstable();
            pick
        } else {
            survivors.clone()
        };
        let neg_features = features_for(neg_pool, &negs, &params, (ww, wh))?;

        let mut samples: Vec<&[f64]> = pos_alive.iter().map(|&i| pos_all[i].as_slice()).collect();
        let n_pos = samples.len();
        samples.extend(neg_features.iter().map(|f| f.as_slice()));
        let min_stumps = stages.last().map_or(1, |s| s.weak_learners.len());
        let (stage, mut report) = boost_stage(&samples, n_pos, params, min_stumps, cfg, k)?;

        // Survivors of this stage among the whole pool; features outside the
        // training subset are computed on the fly rather than stored.
        let in_negs: HashMap<usize, usize> = negs.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        let keep: Vec<bool> = survivors
            .par_iter()
            .map(|&i| {
                let vote = match in_negs.get(&i) {
                    Some(&j) => stage.vote(&neg_features[j]),
                    None => stage.vote(&window_features(neg_pool, i, &params, (ww, wh))?),
                };
                Ok(vote >= stage.stage_threshold)
            })
            .collect::<Result<_>>()?;
        let mut keep_iter = keep.into_iter();
        survivors.retain(|_| keep_iter.next().unwrap());
        pos_alive.retain(|&i| stage.vote(&pos_all[i]) >= stage.stage_threshold);
        report.pool_false_positive_rate = survivors.len() as f64 / neg_pool.len() as f64;
        log::debug!(
            "cascade stage {k}: {} stumps, stage fpr {:.4}, pool fpr {:.5}",
            report.stumps,
            report.false_positive_rate,
            report.pool_false_positive_rate
        );
        stages.push(stage);
        reports.push(report);
    }

    let model = CascadeModel { window_width: ww, window_height: wh, stages };
    model.validate()?;
    Ok((model, CascadeTrainReport { stages: reports }))
}

fn features_for(
    src: &dyn WindowSource,
    idx: &[usize],
    params: &HogParams,
    size: (usize, usize),
) -> Result<Vec<Vec<f64>>> {
    idx.par_iter().map(|&i| window_features(src, i, params, size)).collect()
}

fn window_features(src: &dyn WindowSource, i: usize, params: &HogParams, size: (usize, usize)) -> Result<Vec<f64>> {
    let dims = src.window_size(i)?;
    if dims != size {
        return Err(Error::DimensionMismatch(format!(
            "training window {}x{} vs {}x{}",
            dims.0, dims.1, size.0, size.1
        )));
    }
    src.features(i, params)
}

/// Largest threshold accepting at least `rate` of the positive votes.
fn threshold_for_rate(pos_votes: &[f64], rate: f64) -> f64 {
    let mut sorted = pos_votes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let allowed_misses = ((1.0 - rate) * sorted.len() as f64 + 1e-9).floor() as usize;
    sorted[allowed_misses.min(sorted.len() - 1)]
}

/// Grow one stage by AdaBoost. `samples[..n_pos]` are positives.
fn boost_stage(
    samples: &[&[f64]],
    n_pos: usize,
    hog_params: HogParams,
    min_stumps: usize,
    cfg: &CascadeTrainConfig,
    stage_index: usize,
) -> Result<(Stage, StageReport)> {
    let n = samples.len();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let dim = samples[0].len();
    let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();

    // Per-feature ascending sample order.
    let sorted: Vec<Vec<u32>> = (0..dim)
        .into_par_iter()
        .map(|f| {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| samples[a as usize][f].total_cmp(&samples[b as usize][f]).then(a.cmp(&b)));
            order
        })
        .collect();

    let mut weights: Vec<f64> =
        (0..n).map(|i| if labels[i] { 0.5 / n_pos as f64 } else { 0.5 / n_neg as f64 }).collect();
    let mut votes = vec![0.0; n];
    let mut stumps = Vec::new();

    loop {
        let (feature, threshold, polarity) = best_stump(samples, &labels, &weights, &sorted);
        let mut stump = Stump { feature, threshold, polarity, weight: 0.0 };
        let fired: Vec<bool> = samples.iter().map(|x| stump.fires(x)).collect();
        let err: f64 = (0..n).filter(|&i| fired[i] != labels[i]).map(|i| weights[i]).sum::<f64>();
        let err = err.clamp(1e-10, 1.0 - 1e-10);
        let beta = err / (1.0 - err);
        stump.weight = (1.0 / beta).ln();
        for i in 0..n {
            if fired[i] == labels[i] {
                weights[i] *= beta;
            }
            if fired[i] {
                votes[i] += stump.weight;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        stumps.push(stump);

        let threshold = threshold_for_rate(&votes[..n_pos], cfg.min_detection_rate);
        let passed_neg = votes[n_pos..].iter().filter(|&&v| v >= threshold).count();
        let fpr = passed_neg as f64 / n_neg as f64;
        if fpr <= cfg.max_fp_rate && stumps.len() >= min_stumps {
            let detected = votes[..n_pos].iter().filter(|&&v| v >= threshold).count();
            let report = StageReport {
                stumps: stumps.len(),
                positives: n_pos,
                negatives: n_neg,
                detection_rate: detected as f64 / n_pos as f64,
                false_positive_rate: fpr,
                pool_false_positive_rate: f64::NAN,
            };
            return Ok((Stage { weak_learners: stumps, stage_threshold: threshold, hog_params }, report));
        }
        if stumps.len() >= cfg.max_stumps_per_stage.max(min_stumps) {
            return Err(Error::StageBudgetExhausted { stage: stage_index, fpr, stumps: stumps.len() });
        }
    }
}

/// Minimum weighted-error stump; ties go to the lowest feature index.
fn best_stump(samples: &[&[f64]], labels: &[bool], weights: &[f64], sorted: &[Vec<u32>]) -> (usize, f64, i8) {
    let total_pos: f64 = (0..labels.len()).filter(|&i| labels[i]).map(|i| weights[i]).sum();
    let total_neg: f64 = (0..labels.len()).filter(|&i| !labels[i]).map(|i| weights[i]).sum();
    let per_feature: Vec<(f64, f64, i8)> = sorted
        .par_iter()
        .enumerate()
        .map(|(f, order)| {
            let mut below_pos = 0.0;
            let mut below_neg = 0.0;
            let mut best = (f64::INFINITY, 0.0, 1i8);
            for k in 0..order.len() {
                let i = order[k] as usize;
                if labels[i] {
                    below_pos += weights[i];
                } else {
                    below_neg += weights[i];
                }
                let Some(&next) = order.get(k + 1) else { break };
                let (v, vn) = (samples[i][f], samples[next as usize][f]);
                if v == vn {
                    continue;
                }
                let thr = 0.5 * (v + vn);
                // fires above: misses positives below, passes negatives above
                let err_up = below_pos + (total_neg - below_neg);
                let err_down = below_neg + (total_pos - below_pos);
                if err_up < best.0 {
                    best = (err_up, thr, 1);
                }
                if err_down < best.0 {
                    best = (err_down, thr, -1);
                }
            }
            best
        })
        .collect();
    let mut best = (0usize, per_feature[0]);
    for (f, cand) in per_feature.iter().enumerate().skip(1) {
        if cand.0 < best.1 .0 {
            best = (f, *cand);
        }
    }
    if !best.1 .0.is_finite() {
        // every feature constant across samples; a stump that never fires
        return (0, f64::INFINITY, 1);
    }
    (best.0, best.1 .1, best.1 .2)
}
