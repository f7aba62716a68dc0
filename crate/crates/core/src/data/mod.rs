//! Seeded synthetic segmentation data and its on-disk layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/{train,val,test}/<case_id>_{img,mask}.pgm
//! ```

pub mod pgm;
pub mod rng;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::BinaryMask;
use crate::model::BoxPrompt;
use pgm::Gray8;
use rng::SplitMix64;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub height: usize,
    pub width: usize,
    pub shapes_per_image: usize,
    pub families: Vec<ShapeFamily>,
    pub foreground: f64,
    pub background: f64,
    pub noise_sigma: f64,
    /// Box jitter: each side grows by a uniform integer in `[0, box_margin_max]`.
    pub box_margin_max: usize,
    /// Half-extent range of a shape, in pixels.
    pub min_half_extent: f64,
    pub max_half_extent: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            height: 64,
            width: 64,
            shapes_per_image: 1,
            families: vec![ShapeFamily::Ellipse, ShapeFamily::Rectangle],
            foreground: 0.7,
            background: 0.3,
            noise_sigma: 0.1,
            box_margin_max: 3,
            min_half_extent: 5.0,
            max_half_extent: 16.0,
        }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.shapes_per_image != 1 {
            return bad(format!("shapes_per_image must be 1, got {}", self.shapes_per_image));
        }
        if self.families.is_empty() {
            return bad("at least one shape family is required".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for v in [self.foreground, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensity {v} outside [0, 1]"));
            }
        }
        if !(self.min_half_extent >= 1.0 && self.min_half_extent <= self.max_half_extent) {
            return bad("need 1 <= min_half_extent <= max_half_extent".into());
        }
        let limit = (self.height.min(self.width) as f64 - 3.0) / 2.0;
        if self.max_half_extent > limit {
            return bad(format!("max_half_extent {} does not fit a {}x{} image", self.max_half_extent, self.height, self.width));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub shape: ShapeConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            shape: ShapeConfig::default(),
            train: 200,
            val: 50,
            test: 50,
        }
    }
}

impl GenerateConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub split: Split,
    /// Relative to the dataset root.
    pub image: String,
    pub mask: String,
    #[serde(rename = "box")]
    pub prompt: BoxPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: GenerateConfig,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!("manifest version {} unsupported", m.version)));
        }
        Ok(m)
    }
}

/// One generated sample before it is written.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Grid,
    pub mask: Grid,
    pub prompt: BoxPrompt,
}

fn draw_sample(cfg: &ShapeConfig, rng: &mut SplitMix64) -> Sample {
    let (h, w) = (cfg.height, cfg.width);
    let family = cfg.families[rng.below(cfg.families.len() as u64) as usize];
    let ry = rng.uniform(cfg.min_half_extent, cfg.max_half_extent);
    let rx = rng.uniform(cfg.min_half_extent, cfg.max_half_extent);
    let cy = rng.uniform(ry + 1.0, h as f64 - 1.0 - ry);
    let cx = rng.uniform(rx + 1.0, w as f64 - 1.0 - rx);
    let inside = |r: usize, c: usize| {
        let dy = (r as f64 - cy) / ry;
        let dx = (c as f64 - cx) / rx;
        match family {
            ShapeFamily::Ellipse => dy * dy + dx * dx <= 1.0,
            ShapeFamily::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        }
    };
    let mask = Grid::from_fn(&[h, w], |i| inside(i / w, i % w) as u8 as f64);

    let (mut r0, mut c0, mut r1, mut c1) = (h, w, 0, 0);
    for i in 0..h * w {
        if mask.data()[i] > 0.0 {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r + 1);
            c1 = c1.max(c + 1);
        }
    }
    let m = cfg.box_margin_max;
    let mut jitter = || rng.range_inclusive(0, m);
    let prompt = BoxPrompt {
        r0: r0.saturating_sub(jitter()),
        c0: c0.saturating_sub(jitter()),
        r1: (r1 + jitter()).min(h),
        c1: (c1 + jitter()).min(w),
    };

    let (fg, bg, sigma) = (cfg.foreground, cfg.background, cfg.noise_sigma);
    let image = Grid::from_fn(&[h, w], |i| {
        let base = bg + (fg - bg) * mask.data()[i];
        let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
        (base + noise).clamp(0.0, 1.0)
    });
    Sample { image, mask, prompt }
}

fn check_box_covers(mask: &Grid, prompt: &BoxPrompt) -> bool {
    let w = mask.shape()[1];
    mask.data()
        .iter()
        .enumerate()
        .all(|(i, &v)| v == 0.0 || prompt.contains(i / w, i % w))
}

/// Writes a dataset under `root` and returns its manifest. The output is a
/// pure function of `(cfg, seed)`.
pub fn generate_dataset(cfg: &GenerateConfig, seed: u64, root: &Path) -> Result<DatasetManifest> {
    cfg.shape.validate()?;
    if cfg.train == 0 || cfg.val == 0 {
        return Err(Error::Config("train and val counts must be >= 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..cfg.count(split) {
            let id = format!("{}_{:04}", split.name(), i);
            let sample = draw_sample(&cfg.shape, &mut rng);
            if sample.mask.sum() == 0.0 || !check_box_covers(&sample.mask, &sample.prompt) {
                return Err(Error::Dataset(format!("generator produced an invalid case {id}")));
            }
            let image = format!("{}/{}_img.pgm", split.name(), id);
            let mask = format!("{}/{}_mask.pgm", split.name(), id);
            pgm::write_pgm(&sample.image, &root.join(&image))?;
            pgm::write_pgm(&sample.mask, &root.join(&mask))?;
            cases.push(CaseEntry {
                id,
                split,
                image,
                mask,
                prompt: sample.prompt,
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        config: cfg.clone(),
        cases,
    };
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A case loaded from disk and ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub image: Grid,
    pub mask: BinaryMask,
    pub prompt: BoxPrompt,
}

fn binarize(raw: &Gray8) -> Result<BinaryMask> {
    BinaryMask::from_bits(&[raw.height, raw.width], raw.pixels.iter().map(|&p| p >= 128).collect())
}

/// Image scaled to `[0, 1]`, mask binarized at 128.
pub fn load_case(root: &Path, entry: &CaseEntry) -> Result<Case> {
    let img = pgm::read_raw(&root.join(&entry.image))?;
    let mask = pgm::read_raw(&root.join(&entry.mask))?;
    if (img.height, img.width) != (mask.height, mask.width) {
        return Err(Error::Shape(format!(
            "case {}: image {}x{} vs mask {}x{}",
            entry.id, img.height, img.width, mask.height, mask.width
        )));
    }
    entry.prompt.check_within(img.height, img.width)?;
    let image = Grid::new(
        vec![img.height, img.width],
        img.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    Ok(Case {
        id: entry.id.clone(),
        image,
        mask: binarize(&mask)?,
        prompt: entry.prompt,
    })
}

pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Case>> {
    manifest.split(split).map(|e| load_case(root, e)).collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenerateConfig {
        GenerateConfig {
            shape: ShapeConfig {
                height: 32,
                width: 32,
                max_half_extent: 10.0,
                ..Default::default()
            },
            train: 6,
            val: 3,
            test: 2,
        }
    }

    #[test]
    fn noiseless_images_have_two_levels() {
        let cfg = ShapeConfig {
            noise_sigma: 0.0,
            ..ShapeConfig::default()
        };
        let mut rng = SplitMix64::new(4);
        for _ in 0..10 {
            let s = draw_sample(&cfg, &mut rng);
            for (v, m) in s.image.data().iter().zip(s.mask.data()) {
                assert_eq!(*v, if *m > 0.0 { 0.7 } else { 0.3 });
            }
            let q = pgm::quantize(&s.image).unwrap();
            let mut levels: Vec<u8> = q.pixels.clone();
            levels.sort();
            levels.dedup();
            assert_eq!(levels.len(), 2);
        }
    }

    #[test]
    fn boxes_cover_masks() {
        let cfg = ShapeConfig::default();
        let mut rng = SplitMix64::new(8);
        for _ in 0..200 {
            let s = draw_sample(&cfg, &mut rng);
            assert!(s.mask.sum() > 0.0);
            assert!(check_box_covers(&s.mask, &s.prompt));
            s.prompt.check_within(64, 64).unwrap();
        }
    }

    #[test]
    fn generate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 42, dir.path()).unwrap();
        assert_eq!(m.cases.len(), 11);
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        let cases = load_split(dir.path(), &m, Split::Val).unwrap();
        assert_eq!(cases.len(), 3);
        for c in &cases {
            assert!(c.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let w = c.mask.shape()[1];
            for (i, &b) in c.mask.bits().iter().enumerate() {
                assert!(!b || c.prompt.contains(i / w, i % w));
            }
        }
    }

    #[test]
    fn tampered_mask_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 1, dir.path()).unwrap();
        let entry = &m.cases[0];
        pgm::write_pgm(&Grid::zeros(&[5, 5]), &dir.path().join(&entry.mask)).unwrap();
        assert!(matches!(load_case(dir.path(), entry), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_values_binarize() {
        let raw = Gray8 { height: 1, width: 4, pixels: vec![0, 255, 127, 128] };
        assert_eq!(binarize(&raw).unwrap().bits(), &[false, true, false, true]);
    }

    #[test]
    fn rejects_bad_counts_and_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.val = 0;
        assert!(generate_dataset(&cfg, 1, dir.path()).is_err());
        let mut cfg = small();
        cfg.shape.noise_sigma = -1.0;
        assert!(generate_dataset(&cfg, 1, dir.path()).is_err());
    }
}
