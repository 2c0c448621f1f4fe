//! Histogram-of-oriented-gradients descriptor for a fixed-size window.
//!
//! Gradient magnitude is voted into unsigned orientation bins over
//! `[0°, 180°)`, splitting each vote linearly between the two nearest bin
//! centers (the orientation axis wraps around). Cell histograms are
//! grouped into overlapping blocks and every block vector `v` is replaced
//! by `v / sqrt(|v|² + ε²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::{gradient, unsigned_angle_deg, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HogParams {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Block side in cells.
    pub block_size: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    pub bins: usize,
    pub normalization_epsilon: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self { cell_size: 8, block_size: 2, block_stride: 1, bins: 9, normalization_epsilon: 1e-6 }
    }
}

impl HogParams {
    pub fn with_cell_size(self, cell_size: usize) -> Self {
        Self { cell_size, ..self }
    }

    /// Cell and block grid for a `width`×`height` window.
    pub fn layout(&self, width: usize, height: usize) -> Result<HogLayout> {
        if self.cell_size == 0 || self.block_size == 0 || self.block_stride == 0 || self.bins == 0 {
            return Err(Error::InvalidParameter(format!("degenerate HOG parameters {self:?}")));
        }
        if !(self.normalization_epsilon >= 0.0 && self.normalization_epsilon.is_finite()) {
            return Err(Error::InvalidParameter("normalization epsilon must be >= 0".into()));
        }
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return Err(Error::DimensionMismatch(format!(
                "window {width}x{height} not divisible by cell size {}",
                self.cell_size
            )));
        }
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        if self.block_size > cells_x || self.block_size > cells_y {
            return Err(Error::DimensionMismatch(format!(
                "block of {} cells exceeds {cells_x}x{cells_y} cell grid",
                self.block_size
            )));
        }
        Ok(HogLayout {
            cells_x,
            cells_y,
            blocks_x: (cells_x - self.block_size) / self.block_stride + 1,
            blocks_y: (cells_y - self.block_size) / self.block_stride + 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HogLayout {
    pub cells_x: usize,
    pub cells_y: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

/// Flat descriptor: blocks in row-major order, each block's cells in
/// row-major order, each cell contributing `bins` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
}

impl HogDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Descriptor length for a `width`×`height` window.
pub fn hog_length(width: usize, height: usize, params: &HogParams) -> Result<usize> {
    let l = params.layout(width, height)?;
    Ok(l.blocks_x * l.blocks_y * params.block_size * params.block_size * params.bins)
}

pub fn compute_hog(window: &Image, params: &HogParams) -> Result<HogDescriptor> {
    if window.channels() != 1 {
        return Err(Error::DimensionMismatch("HOG needs a 1-channel window".into()));
    }
    let (w, h) = (window.width(), window.height());
    let layout = params.layout(w, h)?;
    let grad = gradient(window)?;
    Ok(assemble(w, h, params, &layout, |x, y| {
        let i = y * w + x;
        (grad.magnitude(i), grad.orientation(i))
    }))
}

/// Cell histograms with bilinear orientation voting, then per-block L2
/// normalization. `pixel(x, y)` yields gradient magnitude and unsigned
/// orientation in degrees.
fn assemble(
    w: usize,
    h: usize,
    params: &HogParams,
    layout: &HogLayout,
    pixel: impl Fn(usize, usize) -> (f64, f64),
) -> HogDescriptor {
    let bins = params.bins;
    let bin_width = 180.0 / bins as f64;
    let mut cells = vec![0.0; layout.cells_x * layout.cells_y * bins];
    for y in 0..h {
        let cy = y / params.cell_size;
        for x in 0..w {
            let (mag, orientation) = pixel(x, y);
            if mag == 0.0 {
                continue;
            }
            let pos = orientation / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = (lo as isize).rem_euclid(bins as isize) as usize;
            let hi = (lo + 1) % bins;
            let base = (cy * layout.cells_x + x / params.cell_size) * bins;
            cells[base + lo] += (1.0 - frac) * mag;
            cells[base + hi] += frac * mag;
        }
    }

    let bs = params.block_size;
    let eps2 = params.normalization_epsilon * params.normalization_epsilon;
    let mut values = Vec::with_capacity(layout.blocks_x * layout.blocks_y * bs * bs * bins);
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            let start = values.len();
            for cy in by * params.block_stride..by * params.block_stride + bs {
                for cx in bx * params.block_stride..bx * params.block_stride + bs {
                    let base = (cy * layout.cells_x + cx) * bins;
                    values.extend_from_slice(&cells[base..base + bins]);
                }
            }
            let block = &mut values[start..];
            let norm2: f64 = block.iter().map(|v| v * v).sum();
            let denom = (norm2 + eps2).sqrt();
            if denom > 0.0 {
                block.iter_mut().for_each(|v| *v /= denom);
            }
        }
    }
    HogDescriptor { values }
}

/// Gradient magnitude and orientation of a whole grayscale image, computed
/// once so that many window descriptors can share them. A window's
/// descriptor is identical to [`compute_hog`] on the cropped window: pixels
/// on the window border are re-derived with the crop's one-sided rule.
#[derive(Clone, Debug)]
pub struct HogImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    magnitude: Vec<f64>,
    orientation: Vec<f64>,
}

impl HogImage {
    pub fn new(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::DimensionMismatch("HOG needs a 1-channel image".into()));
        }
        let g = gradient(img)?;
        let n = img.width() * img.height();
        Ok(HogImage {
            width: img.width(),
            height: img.height(),
            data: img.data().to_vec(),
            magnitude: (0..n).map(|i| g.magnitude(i)).collect(),
            orientation: (0..n).map(|i| g.orientation(i)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Descriptor of the window `b`, which must lie inside the image.
    pub fn window_hog(&self, b: &BoundingBox, params: &HogParams) -> Result<HogDescriptor> {
        if !b.fits_in(self.width, self.height) || b.w <= 0 || b.h <= 0 {
            return Err(Error::DimensionMismatch(format!(
                "window {b:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let (cw, ch) = (b.w as usize, b.h as usize);
        if cw < 3 || ch < 3 {
            return Err(Error::ImageTooSmall { width: cw, height: ch, min: 3 });
        }
        let layout = params.layout(cw, ch)?;
        let (x0, y0, w) = (b.x as usize, b.y as usize, self.width);
        let d = &self.data;
        Ok(assemble(cw, ch, params, &layout, |x, y| {
            let (gx, gy) = (x0 + x, y0 + y);
            let i = gy * w + gx;
            let border_x = x == 0 || x == cw - 1;
            let border_y = y == 0 || y == ch - 1;
            if !border_x && !border_y {
                return (self.magnitude[i], self.orientation[i]);
            }
            let dx = if x == 0 {
                2.0 * (d[i + 1] - d[i])
            } else if x == cw - 1 {
                2.0 * (d[i] - d[i - 1])
            } else {
                d[i + 1] - d[i - 1]
            };
            let dy = if y == 0 {
                2.0 * (d[i + w] - d[i])
            } else if y == ch - 1 {
                2.0 * (d[i] - d[i - w])
            } else {
                d[i + w] - d[i - w]
            };
            (dx.hypot(dy), unsigned_angle_deg(dy.atan2(dx)))
        }))
    }
}
