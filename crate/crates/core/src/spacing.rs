//! Spacing plausibility: a Gaussian mixture over normalized post spacing,
//! the derived space-ubiquity table, and dynamic-programming selection of
//! the most plausible chain of detections along one floor.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per floor: consecutive center-x distances divided by that floor's
/// median distance. Floors with fewer than two boxes contribute nothing.
pub fn normalized_spacings(boxes_by_floor: &[Vec<BoundingBox>]) -> Vec<f64> {
    let mut out = Vec::new();
    for floor in boxes_by_floor {
        if floor.len() < 2 {
            continue;
        }
        let mut xs: Vec<f64> = floor.iter().map(|b| b.center_x()).collect();
        xs.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
        let m = median(&mut gaps.clone());
        if m <= 0.0 {
            continue;
        }
        out.extend(gaps.iter().map(|g| g / m));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GmmComponent {
    pub fn pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        (-0.5 * d * d / self.variance).exp() / (2.0 * PI * self.variance).sqrt()
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * d * d / self.variance - 0.5 * (2.0 * PI * self.variance).ln()
    }
}

/// One-dimensional Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.pdf(x)).sum()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_pdf(x)).sum()
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::ModelFormat("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::ModelFormat(format!("mixture weights sum to {total}")));
        }
        for c in &self.components {
            if !(c.weight >= 0.0 && c.mean.is_finite() && c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::ModelFormat(format!("invalid component {c:?}")));
            }
        }
        Ok(())
    }

    /// Draw one value.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.last().unwrap();
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        chosen.mean + chosen.variance.sqrt() * z
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { seed: 0, tol: 1e-6, max_iter: 500, variance_floor: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood at initialization and after every EM iteration.
    pub history: Vec<f64>,
}

/// Expectation-maximization from a k-means++ start. Stops when the
/// log-likelihood gains less than `tol` or after `max_iter` iterations.
pub fn fit_gmm_em(samples: &[f64], k: usize, cfg: &GmmConfig) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be positive".into()));
    }
    if samples.len() < k {
        return Err(Error::TooFewSamples { have: samples.len(), need: k });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite spacing sample".into()));
    }
    let n = samples.len();
    let centers = kmeans_pp(samples, k, cfg.seed)?;

    // hard assignment to the seeds, then one maximum-likelihood step
    let mut resp = vec![0.0; n * k];
    for (i, &x) in samples.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
            .unwrap();
        resp[i * k + j] = 1.0;
    }
    let mut model = GmmModel {
        components: centers.iter().map(|&m| GmmComponent { weight: 1.0 / k as f64, mean: m, variance: 1.0 }).collect(),
    };
    m_step(samples, &resp, &mut model, cfg.variance_floor);

    let mut ll = model.log_likelihood(samples);
    let mut history = vec![ll];
    let mut iterations = 0;
    let mut log_terms = vec![0.0; k];
    while iterations < cfg.max_iter {
        for (i, &x) in samples.iter().enumerate() {
            for (j, c) in model.components.iter().enumerate() {
                log_terms[j] = if c.weight > 0.0 { c.weight.ln() + c.log_pdf(x) } else { f64::NEG_INFINITY };
            }
            let norm = log_sum_exp(&log_terms);
            for j in 0..k {
                resp[i * k + j] = (log_terms[j] - norm).exp();
            }
        }
        m_step(samples, &resp, &mut model, cfg.variance_floor);
        iterations += 1;
        let next = model.log_likelihood(samples);
        history.push(next);
        let gain = next - ll;
        ll = next;
        if gain < cfg.tol {
            break;
        }
    }
    Ok(GmmFit { model, log_likelihood: ll, iterations, history })
}

fn m_step(samples: &[f64], resp: &[f64], model: &mut GmmModel, floor: f64) {
    let k = model.k();
    let mut mass = vec![0.0; k];
    for (i, _) in samples.iter().enumerate() {
        for j in 0..k {
            mass[j] += resp[i * k + j];
        }
    }
    let total: f64 = mass.iter().sum();
    for (j, c) in model.components.iter_mut().enumerate() {
        c.weight = mass[j] / total;
        if mass[j] <= 0.0 {
            continue;
        }
        let mean = samples.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / mass[j];
        let var = samples
            .iter()
            .enumerate()
            .map(|(i, x)| resp[i * k + j] * (x - mean) * (x - mean))
            .sum::<f64>()
            / mass[j];
        c.mean = mean;
        c.variance = var.max(floor);
    }
}

fn kmeans_pp(samples: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = samples
            .iter()
            .map(|x| centers.iter().map(|c| (x - c) * (x - c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateSamples);
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && *d > 0.0 {
                pick = i;
                break;
            }
        }
        centers.push(samples[pick]);
    }
    Ok(centers)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BicRow {
    pub k: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BicSelection {
    pub k: usize,
    pub model: GmmModel,
    pub table: Vec<BicRow>,
}

/// `-2 ln L + (3k - 1) ln n`.
pub fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + (3 * k - 1) as f64 * (n as f64).ln()
}

/// Fit every `k` in `k_range` and keep the BIC minimizer (ties to smaller k).
pub fn select_k_bic(samples: &[f64], k_range: &[usize], cfg: &GmmConfig) -> Result<BicSelection> {
    if k_range.is_empty() {
        return Err(Error::InvalidParameter("empty component range".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut best: Option<(f64, usize, GmmModel)> = None;
    let mut table = Vec::new();
    for k in ks {
        let fit = fit_gmm_em(samples, k, cfg)?;
        let score = bic(fit.log_likelihood, k, samples.len());
        table.push(BicRow { k, log_likelihood: fit.log_likelihood, bic: score });
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, k, fit.model));
        }
    }
    let (_, k, model) = best.unwrap();
    Ok(BicSelection { k, model, table })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UbiquityConfig {
    pub bins: usize,
    pub s_max: f64,
    /// Absolute penalty; when absent, `tau_fraction` of the peak density is used.
    pub tau: Option<f64>,
    pub tau_fraction: f64,
}

impl Default for UbiquityConfig {
    fn default() -> Self {
        Self { bins: 200, s_max: 4.0, tau: None, tau_fraction: 0.25 }
    }
}

/// Mixture density minus a penalty, tabulated over `[0, s_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UbiquityTable {
    pub bin_edges: Vec<f64>,
    pub values: Vec<f64>,
    pub tau: f64,
}

impl UbiquityTable {
    /// Value of the bin containing `s`; out-of-range spacings use the nearest edge bin.
    pub fn lookup(&self, s: f64) -> f64 {
        let n = self.values.len();
        let lo = self.bin_edges[0];
        let hi = self.bin_edges[n];
        if !(s > lo) {
            return self.values[0];
        }
        if s >= hi {
            return self.values[n - 1];
        }
        let idx = self.bin_edges.partition_point(|&e| e <= s) - 1;
        self.values[idx.min(n - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.bin_edges.len() != self.values.len() + 1 {
            return Err(Error::ModelFormat("ubiquity table edges/values mismatch".into()));
        }
        if self.bin_edges.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::ModelFormat("ubiquity bin edges not increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || !self.tau.is_finite() {
            return Err(Error::ModelFormat("non-finite ubiquity value".into()));
        }
        Ok(())
    }
}

pub fn build_ubiquity_table(model: &GmmModel, cfg: &UbiquityConfig) -> Result<UbiquityTable> {
    if cfg.bins == 0 || !(cfg.s_max > 0.0) {
        return Err(Error::InvalidParameter("ubiquity table needs bins > 0 and s_max > 0".into()));
    }
    let width = cfg.s_max / cfg.bins as f64;
    let bin_edges: Vec<f64> = (0..=cfg.bins).map(|i| i as f64 * width).collect();
    let density: Vec<f64> = (0..cfg.bins).map(|i| model.pdf((i as f64 + 0.5) * width)).collect();
    let tau = match cfg.tau {
        Some(t) => t,
        None => cfg.tau_fraction * density.iter().copied().fold(0.0, f64::max),
    };
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("penalty must be non-negative, got {tau}")));
    }
    let values = density.iter().map(|d| d - tau).collect();
    Ok(UbiquityTable { bin_edges, values, tau })
}

/// Chosen chain and its objective (sum of consecutive pair values; 0 for a single detection).
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub selected: Vec<Detection>,
    pub objective: f64,
    /// Median spacing used to normalize, when one was defined.
    pub median_spacing: Option<f64>,
}

pub fn select_best_combination(dets_on_floor: &[Detection], table: &UbiquityTable) -> Vec<Detection> {
    select_best_combination_scored(dets_on_floor, table).selected
}

/// Maximum-objective chain over detections sorted by center x, where a
/// chain's objective sums the table value of each consecutive normalized
/// spacing. The normalizing median is taken over all consecutive
/// candidate spacings before selection. A non-positive optimum falls back
/// to the single best-scored detection.
pub fn select_best_combination_scored(dets: &[Detection], table: &UbiquityTable) -> Selection {
    if dets.len() < 2 {
        return Selection { selected: dets.to_vec(), objective: 0.0, median_spacing: None };
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by(|a, b| {
        a.bbox
            .center_x()
            .total_cmp(&b.bbox.center_x())
            .then(a.bbox.y.cmp(&b.bbox.y))
            .then(b.score.total_cmp(&a.score))
    });
    let xs: Vec<f64> = sorted.iter().map(|d| d.bbox.center_x()).collect();
    let mut gaps: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
    let m = median(&mut gaps);
    if m <= 0.0 {
        log::warn!("zero median spacing on a floor of {} detections; keeping all", dets.len());
        return Selection { selected: sorted, objective: 0.0, median_spacing: None };
    }

    let n = sorted.len();
    let mut best = vec![0.0; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];
    for i in 1..n {
        for j in 0..i {
            let cand = best[j] + table.lookup((xs[i] - xs[j]) / m);
            if cand > best[i] {
                best[i] = cand;
                prev[i] = Some(j);
            }
        }
    }
    let mut end = 0;
    for i in 1..n {
        if best[i] > best[end] {
            end = i;
        }
    }
    if best[end] <= 0.0 {
        let mut top = 0;
        for i in 1..n {
            if sorted[i].score > sorted[top].score {
                top = i;
            }
        }
        return Selection { selected: vec![sorted[top]], objective: best[end], median_spacing: Some(m) };
    }
    let mut chain = vec![end];
    while let Some(p) = prev[*chain.last().unwrap()] {
        chain.push(p);
    }
    chain.reverse();
    Selection { selected: chain.into_iter().map(|i| sorted[i]).collect(), objective: best[end], median_spacing: Some(m) }
}

pub const SPACING_FORMAT_VERSION: u32 = 1;

/// Fitted mixture plus its ubiquity table.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacingModel {
    pub gmm: GmmModel,
    pub table: UbiquityTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpacingDocument {
    format_version: u32,
    components: Vec<GmmComponent>,
    bin_edges: Vec<f64>,
    values: Vec<f64>,
    tau: f64,
}

impl SpacingModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = SpacingDocument {
            format_version: SPACING_FORMAT_VERSION,
            components: self.gmm.components.clone(),
            bin_edges: self.table.bin_edges.clone(),
            values: self.table.values.clone(),
            tau: self.table.tau,
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpacingDocument = serde_json::from_str(text)?;
        if doc.format_version != SPACING_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format_version {}", doc.format_version)));
        }
        let model = SpacingModel {
            gmm: GmmModel { components: doc.components },
            table: UbiquityTable { bin_edges: doc.bin_edges, values: doc.values, tau: doc.tau },
        };
        model.gmm.validate()?;
        model.table.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_to_string(path)?)
    }
}

/// CSV of the sample histogram (as a density) with each weighted component
/// curve and the mixture evaluated at the bin centers.
pub fn spacing_histogram_csv(samples: &[f64], model: &GmmModel, bins: usize, s_max: f64) -> String {
    let width = s_max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        if s >= 0.0 && s < s_max {
            counts[((s / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    let mut out = String::from("bin_center,histogram_density");
    for j in 0..model.k() {
        let _ = write!(out, ",component_{}", j + 1);
    }
    out.push_str(",mixture\n");
    for (i, c) in counts.iter().enumerate() {
        let x = (i as f64 + 0.5) * width;
        let _ = write!(out, "{x},{}", *c as f64 / (n * width));
        for comp in &model.components {
            let _ = write!(out, ",{}", comp.weight * comp.pdf(x));
        }
        let _ = writeln!(out, ",{}", model.pdf(x));
    }
    out
}
