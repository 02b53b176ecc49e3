//! Synthetic scenes with learnable image → depth/semantics structure.
//!
//! Depth is a smooth tilted ramp (near at the bottom) spanning the whole
//! rendered range, so every scene covers the threshold bounds. Semantics are
//! four quadrants of random classes split on a 4-pixel lattice. Pixel
//! colour is the class colour dimmed linearly in log depth. Images are quantized to
//! 8 bits and depth to 1/256 m so that files round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{depth_to_u16, write_image_pnm, write_tensor, DType, Manifest, Record, U16_DEPTH_SCALE};
use crate::augment::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Dataset threshold bounds `D_min`, `D_max`.
    pub depth_min: f64,
    pub depth_max: f64,
    pub max_depth: f64,
    /// Every n-th record stores its mask as a teacher pseudo-mask instead of
    /// ground truth; 0 disables.
    pub teacher_every: usize,
}

impl SynthConfig {
    pub fn indoor(count: usize, height: usize, width: usize, classes: usize) -> Self {
        Self { count, height, width, classes, depth_min: 1.5, depth_max: 6.5, max_depth: 10.0, teacher_every: 0 }
    }

    /// Depth range actually rendered; it contains `[D_min, D_max]`.
    pub fn scene_range(&self) -> (f64, f64) {
        (0.75 * self.depth_min, (1.15 * self.depth_max).min(0.95 * self.max_depth))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scene_range();
        if self.height < 16 || self.width < 16 || self.height % 4 != 0 || self.width % 4 != 0 || self.classes < 2 || !(lo > 0.0 && hi > self.depth_max) {
            return Err(Error::invalid(format!("unusable synthetic config {self:?}")));
        }
        Ok(())
    }
}

/// Fixed colour per class.
pub fn class_colour(class: usize) -> [f64; 3] {
    let c = class as f64;
    [0.2 + 0.8 * (0.15 + 0.37 * c).fract(), 0.2 + 0.8 * (0.55 + 0.61 * c).fract(), 0.2 + 0.8 * (0.35 + 0.83 * c).fract()]
}

fn quantize_u8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn quantize_depth(m: f64) -> f64 {
    (m * U16_DEPTH_SCALE).round() / U16_DEPTH_SCALE
}

pub fn scene(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (lo, hi) = cfg.scene_range();
    let tilt: f64 = rng.random_range(-0.3..0.3);
    let mut depth = Vec::with_capacity(h * w);
    for y in 0..h {
        let near = 1.0 - y as f64 / (h - 1) as f64;
        for x in 0..w {
            let across = x as f64 / (w - 1) as f64;
            let across = if tilt < 0.0 { 1.0 - across } else { across };
            let t = near * (1.0 - tilt.abs()) + tilt.abs() * across * near.max(across);
            depth.push(quantize_depth(lo + (hi - lo) * t.clamp(0.0, 1.0)));
        }
    }
    // Quadrants split near the centre on a 4-pixel lattice.
    let split = |n: usize, rng: &mut dyn rand::RngCore| 4 * rng.random_range(3 * n / 32..=5 * n / 32);
    let (ys, xs) = (split(h, rng), split(w, rng));
    let quadrant: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..cfg.classes));
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            labels.push(quadrant[2 * usize::from(y >= ys) + usize::from(x >= xs)] as f64);
        }
    }
    let mut image = Vec::with_capacity(h * w * 3);
    for (&d, &l) in depth.iter().zip(&labels) {
        let shade = 1.0 - 0.8 * (d / lo).ln() / (hi / lo).ln();
        image.extend(class_colour(l as usize).iter().map(|c| quantize_u8(c * shade)));
    }
    Sample::new(Tensor::new([h, w, 3], image)?, Tensor::new([h, w, 1], depth)?, Tensor::new([h, w, 1], labels)?)
}

pub fn scenes(cfg: &SynthConfig, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.count).map(|_| scene(cfg, &mut rng)).collect()
}

/// Writes `cfg.count` scenes and `manifest.tsv` into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SynthConfig, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(cfg.count);
    for (i, s) in scenes(cfg, seed)?.iter().enumerate() {
        let image = dir.join(format!("{i:04}_image.ppm"));
        let depth = dir.join(format!("{i:04}_depth.sdt"));
        let mask = dir.join(format!("{i:04}_mask.sdt"));
        write_image_pnm(&image, &s.image)?;
        write_tensor(&depth, &depth_to_u16(&s.depth)?, DType::U16)?;
        write_tensor(&mask, &s.semantics, DType::U8)?;
        let teacher = cfg.teacher_every > 0 && i % cfg.teacher_every == cfg.teacher_every - 1;
        records.push(Record {
            image,
            depth,
            teacher_mask: teacher.then(|| mask.clone()),
            gt_mask: (!teacher).then_some(mask),
        });
    }
    let manifest = Manifest { records, depth_min: cfg.depth_min, depth_max: cfg.depth_max, max_depth: cfg.max_depth };
    let path = dir.join("manifest.tsv");
    manifest.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::load_sample;

    #[test]
    fn files_reload_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { teacher_every: 2, ..SynthConfig::indoor(3, 16, 16, 4) };
        let path = write_dataset(dir.path(), &cfg, 7).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.records.len(), 3);
        assert!(m.records[1].teacher_mask.is_some() && m.records[1].gt_mask.is_none());
        for (rec, s) in m.records.iter().zip(scenes(&cfg, 7).unwrap()) {
            assert_eq!(load_sample(rec, 4).unwrap(), s);
        }
    }

    #[test]
    fn every_scene_spans_the_bounds() {
        let cfg = SynthConfig::indoor(5, 16, 24, 3);
        for s in scenes(&cfg, 1).unwrap() {
            let (lo, hi) = s.valid_depth_range().unwrap();
            assert!(lo <= cfg.depth_min && hi >= cfg.depth_max);
        }
    }
}
