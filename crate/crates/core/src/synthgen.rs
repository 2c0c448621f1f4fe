//! Synthetic building facades: light background, bright floor slabs, dark
//! guardrail posts standing on each slab, plus post-like distractors that
//! either float off the floor or stand on it at implausible spacing.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floors::FloorLine;
use crate::geometry::BoundingBox;
use crate::image::{load_image, Image};
use crate::spacing::{GmmComponent, GmmModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_w: usize,
    pub image_h: usize,
    /// Slab top rows; posts stand on these.
    pub floor_ys: Vec<usize>,
    pub slab_thickness: usize,
    /// Rows over which the slab's lower edge fades into the background.
    pub slab_fade: usize,
    /// Annotation box size; the dark bar is centered in it.
    pub post_w: usize,
    pub post_h: usize,
    pub bar_width: usize,
    pub posts_per_floor: usize,
    /// Pixels per unit of normalized spacing.
    pub base_spacing: f64,
    /// Generator-side truth for normalized spacing.
    pub spacing_model: GmmModel,
    pub missing_prob: f64,
    /// Post-like bars floating above each floor (removed by the floor filter).
    pub offfloor_distractors: usize,
    /// Bottom of an off-floor distractor lies this many pixels above the floor.
    pub offfloor_gap: (usize, usize),
    /// Post-like bars on each floor between two posts (removed by spacing selection).
    pub interlopers: usize,
    pub noise_sigma: f64,
    pub tilt_deg: f64,
    pub background: f64,
    pub post_intensity: f64,
    pub floor_intensity: f64,
    pub top_rail: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_w: 640,
            image_h: 400,
            floor_ys: vec![130, 250, 370],
            slab_thickness: 12,
            slab_fade: 10,
            post_w: 32,
            post_h: 64,
            bar_width: 8,
            posts_per_floor: 7,
            base_spacing: 75.0,
            spacing_model: GmmModel { components: vec![GmmComponent { weight: 1.0, mean: 1.0, variance: 0.06 * 0.06 }] },
            missing_prob: 0.15,
            offfloor_distractors: 2,
            offfloor_gap: (24, 40),
            interlopers: 1,
            noise_sigma: 0.03,
            tilt_deg: 0.0,
            background: 0.55,
            post_intensity: 0.15,
            floor_intensity: 0.85,
            top_rail: false,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.image_w == 0 || self.image_h == 0 || self.post_w == 0 || self.post_h == 0 {
            return bad("image and post sizes must be positive".into());
        }
        if self.bar_width == 0 || self.bar_width > self.post_w {
            return bad(format!("bar width {} must lie in 1..={}", self.bar_width, self.post_w));
        }
        for &f in &self.floor_ys {
            if f < self.post_h || f + self.slab_thickness > self.image_h {
                return bad(format!("floor at y={f} leaves no room for posts or slab"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return bad(format!("missing_prob {} outside [0,1)", self.missing_prob));
        }
        if !(self.base_spacing > 0.0) || !(self.noise_sigma >= 0.0) || self.tilt_deg.abs() >= 45.0 {
            return bad("base_spacing > 0, noise_sigma >= 0 and |tilt| < 45 required".into());
        }
        if self.offfloor_gap.0 > self.offfloor_gap.1 {
            return bad("offfloor_gap must be (min, max)".into());
        }
        self.spacing_model.validate()
    }

    fn slope(&self) -> f64 {
        self.tilt_deg.to_radians().tan()
    }

    fn min_gap(&self) -> i64 {
        (self.bar_width + 4) as i64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub image: Image,
    pub post_annotations: Vec<BoundingBox>,
    pub true_floor_lines: Vec<FloorLine>,
    pub removed_posts: Vec<BoundingBox>,
    /// Rendered post-like bars that are not guardrail posts.
    pub distractors: Vec<BoundingBox>,
}

/// A bar to paint: center x, bottom row before shear, height.
struct Bar {
    cx: i64,
    bottom: i64,
    height: i64,
}

/// Render one facade; fully determined by `cfg` (including its seed).
pub fn render_facade(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.image_w as i64;
    let half_w = (cfg.post_w / 2) as i64;
    let slope = cfg.slope();
    let shift = |cx: i64| (slope * (cx as f64 - cfg.image_w as f64 / 2.0)).round() as i64;
    let n = cfg.posts_per_floor;
    if n > 0 && (n as i64 - 1) * cfg.min_gap() + cfg.post_w as i64 > w {
        return Err(Error::Synthesis(format!("{n} posts do not fit in {w} px at minimum spacing")));
    }

    let mut annotations = Vec::new();
    let mut removed = Vec::new();
    let mut distractors = Vec::new();
    let mut bars = Vec::new();
    let box_at = |cx: i64, bottom: i64| {
        BoundingBox::new((cx - half_w) as i32, (bottom - cfg.post_h as i64) as i32, cfg.post_w as i32, cfg.post_h as i32)
    };

    for &f in &cfg.floor_ys {
        let f = f as i64;
        let centers = sample_row(cfg, &mut rng)?;
        let mut present = Vec::new();
        for &cx in &centers {
            let b = box_at(cx, f + shift(cx));
            if rng.random::<f64>() < cfg.missing_prob {
                removed.push(b);
            } else {
                annotations.push(b);
                bars.push(Bar { cx, bottom: f, height: cfg.post_h as i64 });
                present.push(cx);
            }
        }
        let mut occupied = centers.clone();
        for _ in 0..cfg.offfloor_distractors {
            for _attempt in 0..50 {
                let cx = rng.random_range(half_w..=w - half_w);
                let gap = rng.random_range(cfg.offfloor_gap.0..=cfg.offfloor_gap.1) as i64;
                if occupied.iter().any(|&o| (o - cx).abs() < cfg.post_w as i64) || f - gap < cfg.post_h as i64 {
                    continue;
                }
                occupied.push(cx);
                distractors.push(box_at(cx, f - gap + shift(cx)));
                bars.push(Bar { cx, bottom: f - gap, height: cfg.post_h as i64 });
                break;
            }
        }
        if present.len() >= 2 {
            for _ in 0..cfg.interlopers {
                let i = rng.random_range(0..present.len() - 1);
                let (a, b) = (present[i], present[i + 1]);
                let cx = a + ((b - a) as f64 * rng.random_range(0.35..0.65)).round() as i64;
                distractors.push(box_at(cx, f + shift(cx)));
                bars.push(Bar { cx, bottom: f, height: cfg.post_h as i64 });
            }
        }
    }

    let mut img = Image::from_fn(cfg.image_w, cfg.image_h, |x, y| {
        let x = x as i64;
        let y0 = y as f64 - slope * (x as f64 - cfg.image_w as f64 / 2.0);
        let y0r = y0.round() as i64;
        let mut v = cfg.background;
        for &f in &cfg.floor_ys {
            let t = y0r - f as i64;
            let thick = cfg.slab_thickness as i64;
            if (0..thick).contains(&t) {
                v = cfg.floor_intensity;
            } else if t >= thick && t < thick + cfg.slab_fade as i64 {
                let a = (t - thick + 1) as f64 / (cfg.slab_fade + 1) as f64;
                v = cfg.floor_intensity + a * (cfg.background - cfg.floor_intensity);
            }
            if cfg.top_rail && t == -(cfg.post_h as i64) {
                v = cfg.post_intensity;
            }
        }
        let bw = cfg.bar_width as i64;
        for b in &bars {
            let left = b.cx - bw / 2;
            if x >= left && x < left + bw && y0r >= b.bottom - b.height && y0r < b.bottom {
                v = cfg.post_intensity;
            }
        }
        v
    });
    if cfg.noise_sigma > 0.0 {
        let normal = rand_distr::Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        let (iw, ih) = (img.width(), img.height());
        for y in 0..ih {
            for x in 0..iw {
                let v = img.get(x, y, 0) + rng.sample(normal);
                img.set(x, y, 0, v.clamp(0.0, 1.0));
            }
        }
    }

    let true_floor_lines = cfg
        .floor_ys
        .iter()
        .map(|&f| FloorLine {
            slope,
            intercept: f as f64 - slope * cfg.image_w as f64 / 2.0,
            coverage: cfg.image_w as f64,
            support: 0,
        })
        .collect();
    Ok(SynthScene { image: img, post_annotations: annotations, true_floor_lines, removed_posts: removed, distractors })
}

/// Post centers along one floor: a uniformly placed run of gaps drawn from
/// the spacing model, each rounded to whole pixels.
fn sample_row(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<i64>> {
    let n = cfg.posts_per_floor;
    if n == 0 {
        return Ok(Vec::new());
    }
    let half_w = (cfg.post_w / 2) as i64;
    let w = cfg.image_w as i64;
    for _ in 0..100 {
        let gaps: Vec<i64> =
            (1..n).map(|_| (cfg.base_spacing * cfg.spacing_model.sample(rng)).round() as i64).collect();
        let total: i64 = gaps.iter().sum();
        if gaps.iter().any(|&g| g < cfg.min_gap()) || total + 2 * half_w > w {
            continue;
        }
        let start = rng.random_range(half_w..=w - half_w - total);
        let mut centers = vec![start];
        for g in gaps {
            centers.push(centers.last().unwrap() + g);
        }
        return Ok(centers);
    }
    Err(Error::Synthesis(format!("could not place {n} posts within {w} px")))
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config: SynthConfig,
}

/// One line of `annotations.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    /// Image path relative to the dataset directory.
    pub image: String,
    pub split: Split,
    pub seed: u64,
    pub posts: Vec<BoundingBox>,
    pub removed: Vec<BoundingBox>,
    pub distractors: Vec<BoundingBox>,
}

/// One line of `floors.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorRecord {
    pub image: String,
    pub floors: Vec<FloorLine>,
}

/// Render `n_train + n_test` scenes with seeds `seed..seed+n` and write
/// `images/*.png`, `annotations.jsonl`, `floors.jsonl` and `manifest.json`.
pub fn make_dataset(cfg: &SynthConfig, n_train: usize, n_test: usize, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let n = n_train + n_test;
    let scenes: Vec<SynthScene> = (0..n)
        .into_par_iter()
        .map(|i| render_facade(&SynthConfig { seed: cfg.seed + i as u64, ..cfg.clone() }))
        .collect::<Result<_>>()?;
    let mut annotations = Vec::with_capacity(n);
    let mut floors = Vec::with_capacity(n);
    let mut manifest =
        DatasetManifest { format_version: DATASET_FORMAT_VERSION, seed: cfg.seed, train: vec![], test: vec![], config: cfg.clone() };
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("images/facade_{i:04}.png");
        scene.image.save_png(&out_dir.join(&name))?;
        let split = if i < n_train { Split::Train } else { Split::Test };
        match split {
            Split::Train => manifest.train.push(name.clone()),
            Split::Test => manifest.test.push(name.clone()),
        }
        annotations.push(AnnotationRecord {
            image: name.clone(),
            split,
            seed: cfg.seed + i as u64,
            posts: scene.post_annotations.clone(),
            removed: scene.removed_posts.clone(),
            distractors: scene.distractors.clone(),
        });
        floors.push(FloorRecord { image: name, floors: scene.true_floor_lines.clone() });
    }
    crate::io::write_jsonl(&out_dir.join("annotations.jsonl"), &annotations)?;
    crate::io::write_jsonl(&out_dir.join("floors.jsonl"), &floors)?;
    crate::io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory written by [`make_dataset`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub annotations: Vec<AnnotationRecord>,
    pub floors: Vec<FloorRecord>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = crate::io::read_json(&root.join("manifest.json"))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported dataset format_version {}", manifest.format_version)));
        }
        let annotations: Vec<AnnotationRecord> = crate::io::read_jsonl(&root.join("annotations.jsonl"))?;
        let floors_path = root.join("floors.jsonl");
        let floors = if floors_path.exists() { crate::io::read_jsonl(&floors_path)? } else { Vec::new() };
        for name in manifest.train.iter().chain(&manifest.test) {
            if !annotations.iter().any(|a| &a.image == name) {
                return Err(Error::Read { path: root.join("annotations.jsonl"), reason: format!("no annotation for {name}") });
            }
        }
        Ok(Dataset { root: root.to_path_buf(), manifest, annotations, floors })
    }

    pub fn records(&self, split: Split) -> Vec<&AnnotationRecord> {
        let names = match split {
            Split::Train => &self.manifest.train,
            Split::Test => &self.manifest.test,
        };
        names.iter().map(|n| self.annotations.iter().find(|a| &a.image == n).expect("checked at load")).collect()
    }

    pub fn image(&self, rec: &AnnotationRecord) -> Result<Image> {
        load_image(&self.root.join(&rec.image))
    }

    pub fn true_floors(&self, image: &str) -> Option<&[FloorLine]> {
        self.floors.iter().find(|f| f.image == image).map(|f| f.floors.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(missing: f64, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            posts_per_floor: 5,
            missing_prob: missing,
            noise_sigma: noise,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn full_grid_count() {
        let s = render_facade(&grid(0.0, 0.0, 1)).unwrap();
        assert_eq!(s.post_annotations.len(), 15);
        assert!(s.removed_posts.is_empty());
    }

    #[test]
    fn deterministic() {
        let a = render_facade(&grid(0.2, 0.03, 5)).unwrap();
        let b = render_facade(&grid(0.2, 0.03, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.image, render_facade(&grid(0.2, 0.03, 6)).unwrap().image);
    }

    #[test]
    fn missing_rate_matches_binomial() {
        let total: usize = (0..400u64)
            .map(|s| render_facade(&SynthConfig { noise_sigma: 0.0, ..grid(0.2, 0.0, s) }).unwrap().post_annotations.len())
            .sum();
        let mean = total as f64 / 400.0;
        assert!((11.4..=12.6).contains(&mean), "{mean}");
    }

    #[test]
    fn posts_stand_on_floors_and_stay_inside() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let s = render_facade(&SynthConfig { seed, ..cfg.clone() }).unwrap();
            for b in &s.post_annotations {
                assert!(b.fits_in(cfg.image_w, cfg.image_h));
                assert!(cfg.floor_ys.iter().any(|&f| (b.bottom() - f as i32).abs() <= 1));
            }
            for r in &s.removed_posts {
                assert!(!s.post_annotations.contains(r));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(render_facade(&SynthConfig { missing_prob: 1.0, ..SynthConfig::default() }).is_err());
        assert!(render_facade(&SynthConfig { floor_ys: vec![10], ..SynthConfig::default() }).is_err());
        assert!(render_facade(&SynthConfig { posts_per_floor: 60, ..SynthConfig::default() }).is_err());
    }

    #[test]
    fn dataset_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { image_w: 320, image_h: 200, floor_ys: vec![90, 180], posts_per_floor: 3, ..SynthConfig::default() };
        let m = make_dataset(&cfg, 3, 2, dir.path()).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (3, 2));
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.annotations.len(), 5);
        assert_eq!(std::fs::read_dir(dir.path().join("images")).unwrap().count(), 5);
        let img = ds.image(ds.records(Split::Test)[0]).unwrap();
        assert_eq!((img.width(), img.height()), (320, 200));
        let dir2 = tempfile::tempdir().unwrap();
        make_dataset(&cfg, 3, 2, dir2.path()).unwrap();
        for f in ["annotations.jsonl", "floors.jsonl", "manifest.json", "images/facade_0004.png"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
        }
    }
}
