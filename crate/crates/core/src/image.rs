//! Raster primitives: a planar intensity image, file IO, luminance and
//! finite-difference gradients.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Row-major, channel-interleaved raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels, expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!((0.0..=1.0).contains(&value), "intensity must lie in [0,1]");
        Self { width, height, channels: 1, data: vec![value; width * height] }
    }

    /// Single-channel image from a per-pixel function; values are clamped to `[0,1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, channels: 1, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let idx = (y * self.width + x) * self.channels + c;
        self.data[idx] = v.clamp(0.0, 1.0);
    }

    /// Copy of the region covered by `b`, which must lie inside the image.
    pub fn crop(&self, b: &BoundingBox) -> Result<Image> {
        if !b.fits_in(self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "box {b:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let (x0, y0, w, h) = (b.x as usize, b.y as usize, b.w as usize, b.h as usize);
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(Image { width: w, height: h, channels: self.channels, data })
    }

    pub fn transpose(&self) -> Image {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    data[(x * self.height + y) * self.channels + c] = self.get(x, y, c);
                }
            }
        }
        Image { width: self.height, height: self.width, channels: self.channels, data }
    }

    /// Image rotated by 90 degrees clockwise.
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.height, self.width);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                // (x, y) -> (h_src - 1 - y, x)
                let nx = self.height - 1 - y;
                let ny = x;
                for c in 0..self.channels {
                    data[(ny * w + nx) * self.channels + c] = self.get(x, y, c);
                }
            }
        }
        Image { width: w, height: h, channels: self.channels, data }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.data[(y * self.width + x) * self.channels + c] =
                        self.get(self.width - 1 - x, y, c);
                }
            }
        }
        out
    }

    /// Multiply every intensity by `k`, clamping to `[0,1]`.
    pub fn scaled(&self, k: f64) -> Image {
        let data = self.data.iter().map(|v| (v * k).clamp(0.0, 1.0)).collect();
        Image { data, ..*self }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { width: self.width, height: self.height, channels: 3, data }
    }

    /// 8-bit quantization, `round(v * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(width, height, channels, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Encode as PNG (8-bit gray or RGB).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.to_bytes(), self.width as u32, self.height as u32, color)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        crate::io::write_atomic(path, &bytes)
    }
}

/// Read a PNG or binary PGM/PPM file; 8-bit values `v` map to `v / 255`.
pub fn load_image(path: &Path) -> Result<Image> {
    let err = |reason: String| Error::ImageRead { path: path.to_path_buf(), reason };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    let format = image::guess_format(&bytes).map_err(|e| err(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(err(format!("unsupported format {format:?}")));
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| err(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let img = if decoded.color().has_color() {
        Image::from_bytes(w, h, 3, decoded.to_rgb8().as_raw())
    } else {
        Image::from_bytes(w, h, 1, decoded.to_luma8().as_raw())
    };
    img.map_err(|e| err(e.to_string()))
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`; single-channel input is returned as is.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    Image { width: img.width, height: img.height, channels: 1, data }
}

/// Per-pixel derivatives of a single-channel image.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    pub fn magnitude(&self, i: usize) -> f64 {
        self.dx[i].hypot(self.dy[i])
    }

    /// Unsigned orientation in degrees, `[0, 180)`.
    pub fn orientation(&self, i: usize) -> f64 {
        unsigned_angle_deg(self.dy[i].atan2(self.dx[i]))
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.dx.len()).map(|i| self.magnitude(i)).collect()
    }
}

pub(crate) fn unsigned_angle_deg(radians: f64) -> f64 {
    let mut deg = radians.to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    // -0.0 and values that round up to 180 after the shift
    if !(0.0..180.0).contains(&deg) {
        deg = 0.0;
    }
    deg
}

/// Centered `[-1, 0, 1]` differences. Border pixels use the one-sided
/// difference scaled by two so a linear ramp has a uniform derivative.
pub fn gradient(img: &Image) -> Result<GradientField> {
    if img.channels != 1 {
        return Err(Error::DimensionMismatch("gradient needs a 1-channel image".into()));
    }
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h, min: 3 });
    }
    let d = &img.data;
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        dx[row] = 2.0 * (d[row + 1] - d[row]);
        for x in 1..w - 1 {
            dx[row + x] = d[row + x + 1] - d[row + x - 1];
        }
        dx[row + w - 1] = 2.0 * (d[row + w - 1] - d[row + w - 2]);
    }
    for x in 0..w {
        dy[x] = 2.0 * (d[w + x] - d[x]);
        for y in 1..h - 1 {
            dy[y * w + x] = d[(y + 1) * w + x] - d[(y - 1) * w + x];
        }
        dy[(h - 1) * w + x] = 2.0 * (d[(h - 1) * w + x] - d[(h - 2) * w + x]);
    }
    Ok(GradientField { width: w, height: h, dx, dy })
}

/// RGB color used by the overlay writers.
pub type Rgb = [f64; 3];

pub const BLUE: Rgb = [0.0, 0.0, 1.0];
pub const RED: Rgb = [1.0, 0.0, 0.0];
pub const GREEN: Rgb = [0.0, 0.8, 0.0];
pub const WHITE: Rgb = [1.0, 1.0, 1.0];

/// Draw a box outline `thickness` pixels wide, clipped to the image.
pub fn draw_box(img: &mut Image, b: &BoundingBox, color: Rgb, thickness: i32) {
    assert_eq!(img.channels, 3, "overlays are drawn on RGB images");
    let (w, h) = (img.width as i32, img.height as i32);
    let mut put = |x: i32, y: i32| {
        if x >= 0 && y >= 0 && x < w && y < h {
            for (c, v) in color.iter().enumerate() {
                img.set(x as usize, y as usize, c, *v);
            }
        }
    };
    for t in 0..thickness {
        for x in b.x..b.x + b.w {
            put(x, b.y + t);
            put(x, b.y + b.h - 1 - t);
        }
        for y in b.y..b.y + b.h {
            put(b.x + t, y);
            put(b.x + b.w - 1 - t, y);
        }
    }
}

/// Draw the line `y = slope * x + intercept` across the full width.
pub fn draw_line(img: &mut Image, slope: f64, intercept: f64, color: Rgb) {
    assert_eq!(img.channels, 3, "overlays are drawn on RGB images");
    for x in 0..img.width {
        let y = (slope * x as f64 + intercept).round();
        if y >= 0.0 && (y as usize) < img.height {
            for (c, v) in color.iter().enumerate() {
                img.set(x, y as usize, c, *v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        let img = Image::new(1, 1, 3, vec![1.0; 3]).unwrap();
        img.save_png(&path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (1, 1, 3));
        assert!(back.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_values_map_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.pgm");
        let mut bytes = b"P5\n4 2\n255\n".to_vec();
        bytes.extend(0u8..8);
        std::fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (4, 2, 1));
        for (k, v) in img.data().iter().enumerate() {
            assert_eq!(*v, k as f64 / 255.0);
        }
    }

    #[test]
    fn truncated_file_is_an_error_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.png");
        let full = Image::filled(16, 16, 0.5).encode_png().unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("cut.png"), "{err}");

        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(load_image(&junk).is_err());
        assert!(load_image(&dir.path().join("missing.png")).is_err());
    }

    #[test]
    fn grayscale_weights() {
        let white = Image::new(2, 1, 3, vec![1.0; 6]).unwrap();
        assert!(to_grayscale(&white).data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_grayscale(&red).data()[0], 0.299);
        let gray = Image::from_fn(3, 2, |x, y| (x + y) as f64 / 10.0);
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient(&Image::filled(5, 4, 0.3)).unwrap();
        assert!(g.dx.iter().chain(&g.dy).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let w = 9;
        let img = Image::from_fn(w, 5, |x, _| x as f64 / (w - 1) as f64);
        let g = gradient(&img).unwrap();
        for y in 0..5 {
            for x in 1..w - 1 {
                assert!((g.dx[y * w + x] - 2.0 / (w - 1) as f64).abs() < 1e-12);
                assert_eq!(g.dy[y * w + x], 0.0);
            }
        }
    }

    #[test]
    fn gradient_rejects_tiny_images() {
        assert!(matches!(
            gradient(&Image::filled(2, 5, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gradient_commutes_with_transpose() {
        let img = Image::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 11) as f64 / 10.0);
        let g = gradient(&img).unwrap();
        let gt = gradient(&img.transpose()).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(g.dx[y * 7 + x], gt.dy[x * 5 + y]);
                assert_eq!(g.dy[y * 7 + x], gt.dx[x * 5 + y]);
            }
        }
    }

    #[test]
    fn magnitude_matches_components() {
        let img = Image::from_fn(6, 6, |x, y| ((x * x + 3 * y) % 7) as f64 / 7.0);
        let g = gradient(&img).unwrap();
        for i in 0..36 {
            let m = g.magnitude(i);
            assert!((m * m - (g.dx[i] * g.dx[i] + g.dy[i] * g.dy[i])).abs() < 1e-9);
            let o = g.orientation(i);
            assert!((0.0..180.0).contains(&o));
        }
    }

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }
}
