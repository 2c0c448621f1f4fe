//! L2-regularized hinge-loss linear SVM trained by dual coordinate descent.
//!
//! The bias is learned as the weight of a constant feature equal to one,
//! so the primal problem is
//!
//! ```text
//! min ½(|w|² + b²) + C Σ max(0, 1 − yᵢ (w·xᵢ + b))
//! ```
//!
//! and its dual is minimized one box-constrained coordinate at a time, in a
//! fixed order drawn once from the seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmTrainConfig {
    /// Hinge-loss weight; regularization strength is inversely proportional to it.
    pub c: f64,
    pub seed: u64,
    pub max_epochs: usize,
    /// Relative duality-gap stopping tolerance.
    pub tolerance: f64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self { c: 1.0, seed: 0, max_epochs: 1000, tolerance: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_dim: usize,
    pub train_config: SvmTrainConfig,
}

impl LinearSvmModel {
    /// `weights · d + bias`.
    pub fn score(&self, d: &[f64]) -> Result<f64> {
        if d.len() != self.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "descriptor length {} vs model dimension {}",
                d.len(),
                self.feature_dim
            )));
        }
        Ok(dot(&self.weights, d) + self.bias)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.feature_dim {
            return Err(Error::ModelFormat(format!(
                "{} weights for feature dimension {}",
                self.weights.len(),
                self.feature_dim
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::ModelFormat("non-finite SVM parameters".into()));
        }
        Ok(())
    }
}

/// Convergence trace of one training run.
#[derive(Clone, Debug, Default)]
pub struct SvmTrainReport {
    /// Dual objective `½(|w|²+b²) − Σα` after each epoch; non-increasing.
    pub dual_objective: Vec<f64>,
    pub primal_objective: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

pub fn train_linear_svm(data: &LabeledSet, cfg: &SvmTrainConfig) -> Result<LinearSvmModel> {
    train_linear_svm_traced(data, cfg).map(|(m, _)| m)
}

pub fn train_linear_svm_traced(
    data: &LabeledSet,
    cfg: &SvmTrainConfig,
) -> Result<(LinearSvmModel, SvmTrainReport)> {
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {}", cfg.c)));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let dim = data.check_trainable()?;
    let n = data.len();
    let xs = &data.features;
    let ys: Vec<f64> = data.labels.iter().map(|&l| f64::from(l)).collect();
    let q_diag: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut report = SvmTrainReport::default();

    for _epoch in 0..cfg.max_epochs {
        for &i in &order {
            let g = ys[i] * (dot(&w, &xs[i]) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
            let step = (alpha[i] - old) * ys[i];
            if step != 0.0 {
                axpy(step, &xs[i], &mut w);
                b += step;
            }
        }
        report.epochs += 1;

        let reg = 0.5 * (dot(&w, &w) + b * b);
        let dual = reg - alpha.iter().sum::<f64>();
        let hinge: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (1.0 - y * (dot(&w, x) + b)).max(0.0))
            .sum();
        let primal = reg + c * hinge;
        report.dual_objective.push(dual);
        report.primal_objective.push(primal);
        if primal + dual <= cfg.tolerance * primal.abs().max(1.0) {
            report.converged = true;
            break;
        }
    }

    log::debug!("svm C={} on {n} samples: {} epochs, converged {}", c, report.epochs, report.converged);
    Ok((LinearSvmModel { weights: w, bias: b, feature_dim: dim, train_config: *cfg }, report))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub c: f64,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub best_c: f64,
    pub table: Vec<GridRow>,
    pub trainings: usize,
}

/// Stratified k-fold cross-validation over `c_grid`; the best C maximizes
/// mean validation accuracy, ties going to the smaller C.
pub fn grid_search_cv(
    data: &LabeledSet,
    c_grid: &[f64],
    folds: usize,
    seed: u64,
    base: &SvmTrainConfig,
) -> Result<GridSearchResult> {
    grid_search_cv_with(data, c_grid, folds, seed, |train, c| {
        train_linear_svm(train, &SvmTrainConfig { c, ..*base })
    })
}

/// Grid search with a caller-supplied trainer.
pub fn grid_search_cv_with<F>(
    data: &LabeledSet,
    c_grid: &[f64],
    folds: usize,
    seed: u64,
    mut train: F,
) -> Result<GridSearchResult>
where
    F: FnMut(&LabeledSet, f64) -> Result<LinearSvmModel>,
{
    if c_grid.is_empty() {
        return Err(Error::InvalidParameter("empty C grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    data.check_trainable()?;
    let fold_of = stratified_folds(&data.labels, folds, seed)?;

    let mut table = Vec::with_capacity(c_grid.len());
    let mut trainings = 0;
    for &c in c_grid {
        let mut fold_accuracy = Vec::with_capacity(folds);
        for k in 0..folds {
            let (train_set, val_set) = data.split(|i| fold_of[i] != k);
            let model = train(&train_set, c)?;
            trainings += 1;
            fold_accuracy.push(accuracy(&model, &val_set)?);
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
        table.push(GridRow { c, fold_accuracy, mean_accuracy });
    }
    Ok(GridSearchResult { best_c: best_c_from_table(&table), table, trainings })
}

/// Highest mean accuracy; ties go to the smaller C.
pub fn best_c_from_table(table: &[GridRow]) -> f64 {
    let mut best = &table[0];
    for row in &table[1..] {
        if row.mean_accuracy > best.mean_accuracy
            || (row.mean_accuracy == best.mean_accuracy && row.c < best.c)
        {
            best = row;
        }
    }
    best.c
}

/// Fraction of samples whose sign of score matches the label (score ≥ 0 is +1).
pub fn accuracy(model: &LinearSvmModel, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let predicted = if model.score(x)? >= 0.0 { 1 } else { -1 };
        if predicted == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn stratified_folds(labels: &[i8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    for class in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < folds {
            return Err(Error::TooFewSamples { have: idx.len(), need: folds });
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    Ok(fold_of)
}
