//! One JSON document holding every tunable of the pipeline. Every field
//! has a default and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{CascadeTrainConfig, SvmTrainConfig};
use crate::detector::ScanParams;
use crate::error::{Error, Result};
use crate::eval::ClassifierKind;
use crate::floors::FloorConfig;
use crate::hog::HogParams;
use crate::spacing::{GmmConfig, UbiquityConfig};
use crate::synthgen::SynthConfig;

/// Training-set construction shared by both classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Add a mirrored copy of every positive window.
    pub flip_positives: bool,
    /// Negatives overlap every post and distractor by less than this IOU.
    pub negative_max_iou: f64,
    /// Random negative windows drawn per training image.
    pub negatives_per_image: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { flip_positives: true, negative_max_iou: 0.3, negatives_per_image: 60, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmStageConfig {
    pub hog: HogParams,
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub train: SvmTrainConfig,
    /// Rounds of retraining with false positives mined from the training images.
    pub hard_negative_rounds: usize,
    pub hard_negatives_per_image: usize,
}

impl Default for SvmStageConfig {
    fn default() -> Self {
        Self {
            hog: HogParams::default(),
            c_grid: vec![0.01, 0.1, 1.0],
            folds: 3,
            // looser than the library default: the grid-search cells dominate training time
            train: SvmTrainConfig { tolerance: 1e-3, max_epochs: 300, ..SvmTrainConfig::default() },
            hard_negative_rounds: 1,
            hard_negatives_per_image: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeStageConfig {
    pub train: CascadeTrainConfig,
    /// Stride of the sliding windows that form the negative pool.
    pub pool_stride: usize,
    /// Pool windows overlap every post and distractor by less than this IOU.
    /// Higher than `sampling.negative_max_iou` so the pool holds near misses.
    pub pool_max_iou: f64,
}

impl Default for CascadeStageConfig {
    fn default() -> Self {
        Self { train: CascadeTrainConfig::default(), pool_stride: 8, pool_max_iou: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpacingConfig {
    pub k_range: Vec<usize>,
    pub gmm: GmmConfig,
    pub ubiquity: UbiquityConfig,
}

impl Default for SpacingConfig {
    fn default() -> Self {
        Self {
            k_range: vec![1, 2, 3, 4, 5],
            gmm: GmmConfig::default(),
            // below the spacing module's 0.25: one missing post (spacing 2x) must stay positive
            ubiquity: UbiquityConfig { tau_fraction: 0.05, ..UbiquityConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub classifier: ClassifierKind,
    pub scan: ScanParams,
    pub sampling: SamplingConfig,
    pub svm: SvmStageConfig,
    pub cascade: CascadeStageConfig,
    pub floors: FloorConfig,
    pub spacing: SpacingConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for ClassifierKind {
    fn default() -> Self {
        ClassifierKind::Cascade
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.scan.validate()?;
        self.synth.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return bad("eval.iou_threshold must lie in (0,1]");
        }
        if self.spacing.k_range.is_empty() || self.spacing.k_range.contains(&0) {
            return bad("spacing.k_range must list positive component counts");
        }
        if self.svm.c_grid.is_empty() || self.svm.c_grid.iter().any(|c| !(*c > 0.0)) {
            return bad("svm.c_grid must list positive values");
        }
        if self.cascade.pool_stride == 0 {
            return bad("cascade.pool_stride must be positive");
        }
        if !(self.cascade.pool_max_iou > 0.0 && self.cascade.pool_max_iou <= 1.0) {
            return bad("cascade.pool_max_iou must lie in (0,1]");
        }
        if !(self.floors.max_dist >= 0.0) {
            return bad("floors.max_dist must be non-negative");
        }
        Ok(())
    }
}
