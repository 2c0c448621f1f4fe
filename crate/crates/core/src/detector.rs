//! Keyframe sampling and single-scale sliding-window detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{WindowClassifier, WindowScore};
use crate::error::{Error, Result};
use crate::geometry::{nms, BoundingBox, Detection};
use crate::hog::HogImage;
use crate::image::{to_grayscale, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanParams {
    pub window_w: usize,
    pub window_h: usize,
    pub stride_x: usize,
    pub stride_y: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self { window_w: 32, window_h: 64, stride_x: 4, stride_y: 4, score_threshold: 0.0, nms_iou: 0.3 }
    }
}

impl ScanParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 || self.window_h == 0 || self.stride_x == 0 || self.stride_y == 0 {
            return Err(Error::InvalidParameter("window and strides must be positive".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidParameter(format!("nms_iou {} outside (0,1]", self.nms_iou)));
        }
        if !self.score_threshold.is_finite() {
            return Err(Error::InvalidParameter("score threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Frame indices `s, s + stride, …` up to `e`, where the first and last
/// `ceil(skip_seconds * fps)` frames are skipped.
pub fn keyframe_indices(total_frames: usize, fps: f64, skip_seconds: f64, stride: usize) -> Result<Vec<usize>> {
    if total_frames == 0 || !(fps > 0.0) || !(skip_seconds >= 0.0) || stride == 0 {
        return Err(Error::InvalidParameter("frames, fps and stride must be positive".into()));
    }
    let skip = (skip_seconds * fps).ceil() as usize;
    let start = skip;
    let end = (total_frames - 1).checked_sub(skip);
    match end {
        Some(end) if start <= end => Ok((start..=end).step_by(stride).collect()),
        _ => Err(Error::InvalidParameter(format!(
            "skipping {skip} frames at each end leaves nothing of {total_frames}"
        ))),
    }
}

/// Every window fully inside the image, row-major from the top-left corner.
pub fn sliding_windows(width: usize, height: usize, p: &ScanParams) -> Vec<BoundingBox> {
    if p.window_w > width || p.window_h > height {
        log::warn!("window {}x{} larger than image {width}x{height}", p.window_w, p.window_h);
        return Vec::new();
    }
    let mut out = Vec::new();
    for y in (0..=height - p.window_h).step_by(p.stride_y) {
        for x in (0..=width - p.window_w).step_by(p.stride_x) {
            out.push(BoundingBox::new(x as i32, y as i32, p.window_w as i32, p.window_h as i32));
        }
    }
    out
}

/// Scored windows at or above the threshold, before suppression, in scan order.
pub fn detect_raw(img: &Image, model: &WindowClassifier, p: &ScanParams) -> Result<Vec<Detection>> {
    p.validate()?;
    if model.window_size() != (p.window_w, p.window_h) {
        let (w, h) = model.window_size();
        return Err(Error::DimensionMismatch(format!(
            "model expects {w}x{h} windows, scan uses {}x{}",
            p.window_w, p.window_h
        )));
    }
    let gray = to_grayscale(img);
    let boxes = sliding_windows(gray.width(), gray.height(), p);
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let cache = HogImage::new(&gray)?;
    let scored: Vec<Option<Detection>> = boxes
        .par_iter()
        .map(|b| {
            Ok(match model.classify_in(&cache, b)? {
                WindowScore::Score(s) if s >= p.score_threshold => Some(Detection::new(*b, s)),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

/// Threshold every window's score, then suppress overlaps.
pub fn detect(img: &Image, model: &WindowClassifier, p: &ScanParams) -> Result<Vec<Detection>> {
    Ok(nms(&detect_raw(img, model, p)?, p.nms_iou))
}
