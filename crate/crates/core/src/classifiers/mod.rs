//! Window classifiers over HOG features: a linear SVM and an attentional
//! cascade of boosted decision-stump stages.

pub mod cascade;
mod model_io;
pub mod svm;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::hog::{compute_hog, HogImage, HogParams};
use crate::image::{to_grayscale, Image};

pub use cascade::{
    cascade_classify, train_cascade, CascadeModel, CascadeOutcome, CascadeTrainConfig,
    CascadeTrainReport, Stage, Stump,
};
pub use model_io::MODEL_FORMAT_VERSION;
pub use svm::{
    grid_search_cv, grid_search_cv_with, train_linear_svm, train_linear_svm_traced, GridRow,
    GridSearchResult, LinearSvmModel, SvmTrainConfig, SvmTrainReport,
};

/// Feature vectors with `+1 / -1` labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<i8>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} descriptors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l != 1 && **l != -1) {
            return Err(Error::InvalidParameter(format!("label {l} is not +1 or -1")));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, label: i8) {
        debug_assert!(label == 1 || label == -1);
        self.features.push(features);
        self.labels.push(label);
    }

    /// Checks both classes are present and dimensions agree; returns the dimension.
    pub(crate) fn check_trainable(&self) -> Result<usize> {
        let has_pos = self.labels.iter().any(|&l| l == 1);
        let has_neg = self.labels.iter().any(|&l| l == -1);
        if !(has_pos && has_neg) {
            return Err(Error::SingleClass);
        }
        let dim = self.features[0].len();
        if let Some(f) = self.features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "descriptor length {} vs {dim}",
                f.len()
            )));
        }
        Ok(dim)
    }

    /// Partition into (`keep(i)` true, false).
    pub(crate) fn split(&self, keep: impl Fn(usize) -> bool) -> (LabeledSet, LabeledSet) {
        let mut a = LabeledSet::default();
        let mut b = LabeledSet::default();
        for i in 0..self.len() {
            let target = if keep(i) { &mut a } else { &mut b };
            target.push(self.features[i].clone(), self.labels[i]);
        }
        (a, b)
    }
}

/// Indexed access to training windows without holding them all in memory.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;
    fn window(&self, i: usize) -> Result<Image>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width and height of window `i`.
    fn window_size(&self, i: usize) -> Result<(usize, usize)> {
        let w = self.window(i)?;
        Ok((w.width(), w.height()))
    }

    /// HOG descriptor of window `i` (after grayscale conversion).
    fn features(&self, i: usize, params: &HogParams) -> Result<Vec<f64>> {
        Ok(compute_hog(&to_grayscale(&self.window(i)?), params)?.values)
    }
}

impl WindowSource for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn window(&self, i: usize) -> Result<Image> {
        Ok(self[i].clone())
    }
}

impl WindowSource for Vec<Image> {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn window(&self, i: usize) -> Result<Image> {
        Ok(self[i].clone())
    }
}

/// Windows cut on demand from whole images whose gradients are computed
/// once; descriptors equal those of the cropped windows.
pub struct CroppedWindows {
    images: Vec<HogImage>,
    grays: Vec<Image>,
    pub boxes: Vec<(usize, BoundingBox)>,
}

impl CroppedWindows {
    pub fn new(images: &[Image], boxes: Vec<(usize, BoundingBox)>) -> Result<Self> {
        let grays: Vec<Image> = images.iter().map(to_grayscale).collect();
        for (i, b) in &boxes {
            let img = grays.get(*i).ok_or_else(|| Error::InvalidParameter(format!("no image {i}")))?;
            if !b.fits_in(img.width(), img.height()) {
                return Err(Error::DimensionMismatch(format!("window {b:?} outside image {i}")));
            }
        }
        let images = grays.iter().map(HogImage::new).collect::<Result<_>>()?;
        Ok(CroppedWindows { images, grays, boxes })
    }
}

impl WindowSource for CroppedWindows {
    fn len(&self) -> usize {
        self.boxes.len()
    }

    fn window(&self, i: usize) -> Result<Image> {
        let (img, b) = self.boxes[i];
        self.grays[img].crop(&b)
    }

    fn window_size(&self, i: usize) -> Result<(usize, usize)> {
        let b = self.boxes[i].1;
        Ok((b.w as usize, b.h as usize))
    }

    fn features(&self, i: usize, params: &HogParams) -> Result<Vec<f64>> {
        let (img, b) = self.boxes[i];
        Ok(self.images[img].window_hog(&b, params)?.values)
    }
}

/// A trained window classifier together with the window geometry it expects.
#[derive(Clone, Debug, PartialEq)]
pub enum WindowClassifier {
    Svm { model: LinearSvmModel, hog: HogParams, window: (usize, usize) },
    Cascade(CascadeModel),
}

/// Result of classifying one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowScore {
    Score(f64),
    Rejected { stage: usize },
}

impl WindowClassifier {
    pub fn window_size(&self) -> (usize, usize) {
        match self {
            WindowClassifier::Svm { window, .. } => *window,
            WindowClassifier::Cascade(m) => (m.window_width, m.window_height),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WindowClassifier::Svm { .. } => "svm",
            WindowClassifier::Cascade(_) => "cascade",
        }
    }

    /// Check that the model can score windows of its declared size.
    pub fn validate(&self) -> Result<()> {
        match self {
            WindowClassifier::Svm { model, hog, window } => {
                model.validate()?;
                let len = crate::hog::hog_length(window.0, window.1, hog)?;
                if len != model.feature_dim {
                    return Err(Error::ModelFormat(format!(
                        "HOG length {len} does not match SVM dimension {}",
                        model.feature_dim
                    )));
                }
                Ok(())
            }
            WindowClassifier::Cascade(m) => m.validate(),
        }
    }

    /// Score the window `b` of a precomputed image; identical to
    /// [`classify`](Self::classify) on the cropped window.
    pub fn classify_in(&self, img: &HogImage, b: &BoundingBox) -> Result<WindowScore> {
        if (b.w as usize, b.h as usize) != self.window_size() {
            let (w, h) = self.window_size();
            return Err(Error::DimensionMismatch(format!("window {}x{} vs model {w}x{h}", b.w, b.h)));
        }
        match self {
            WindowClassifier::Svm { model, hog, .. } => {
                Ok(WindowScore::Score(model.score(&img.window_hog(b, hog)?.values)?))
            }
            WindowClassifier::Cascade(m) => {
                let outcome = cascade::cascade_classify_features(m, |p| Ok(img.window_hog(b, p)?.values), |_| {})?;
                Ok(match outcome {
                    CascadeOutcome::Accepted { margin } => WindowScore::Score(margin),
                    CascadeOutcome::Rejected { stage } => WindowScore::Rejected { stage },
                })
            }
        }
    }

    /// Score a single window (SVM margin, or cascade final-stage margin).
    pub fn classify(&self, window: &Image) -> Result<WindowScore> {
        let gray;
        let window = if window.channels() == 1 {
            window
        } else {
            gray = to_grayscale(window);
            &gray
        };
        match self {
            WindowClassifier::Svm { model, hog, window: size } => {
                if (window.width(), window.height()) != *size {
                    return Err(Error::DimensionMismatch(format!(
                        "window {}x{} vs model {}x{}",
                        window.width(),
                        window.height(),
                        size.0,
                        size.1
                    )));
                }
                let d = compute_hog(window, hog)?;
                Ok(WindowScore::Score(model.score(&d.values)?))
            }
            WindowClassifier::Cascade(m) => Ok(match cascade_classify(m, window)? {
                CascadeOutcome::Accepted { margin } => WindowScore::Score(margin),
                CascadeOutcome::Rejected { stage } => WindowScore::Rejected { stage },
            }),
        }
    }
}
