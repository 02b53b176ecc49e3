//! NearFarMix depth-aware mixing and the photometric/geometric augmentations
//! used alongside it.
//!
//! NearFarMix pairs every sample with its neighbour in a rolled batch and a
//! random depth threshold `thr`. Pixels of the first sample at depth
//! `≤ thr` (the near region) are kept; everything else comes from the
//! partner. The blend is written as four binary masks,
//!
//! ```text
//! M1 = [D1 <= thr]   M2 = [D2 > thr]   Mo = M1·M2   Me = (1 - M1)(1 - M2)
//! out = X1·M1 + (X2·M2 + X2·Me - X2·Mo)
//! ```
//!
//! applied identically to image, depth and semantics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{flip_axis, Tensor};

/// Aligned image `[H,W,3]`, metric depth `[H,W,1]` (0 = invalid) and class
/// indices `[H,W,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub depth: Tensor,
    pub semantics: Tensor,
}

impl Sample {
    pub fn new(image: Tensor, depth: Tensor, semantics: Tensor) -> Result<Self> {
        let s = Self { image, depth, semantics };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = match self.image.shape() {
            &[h, w, 3] => (h, w),
            other => return Err(Error::invalid(format!("sample image must be [H,W,3], got {other:?}"))),
        };
        if self.depth.shape() != [h, w, 1] || self.semantics.shape() != [h, w, 1] {
            return Err(Error::invalid(format!(
                "sample planes disagree: image {:?}, depth {:?}, semantics {:?}",
                self.image.shape(),
                self.depth.shape(),
                self.semantics.shape()
            )));
        }
        self.depth.check_finite("sample depth")?;
        if let Some(v) = self.depth.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!("negative depth {v}")));
        }
        if let Some(v) = self.semantics.data().iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::invalid(format!("semantic label {v} is not a class index")));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    /// `(min, max)` over valid (positive) depth pixels.
    pub fn valid_depth_range(&self) -> Option<(f64, f64)> {
        self.depth
            .data()
            .iter()
            .filter(|&&d| d > 0.0)
            .fold(None, |acc, &d| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

/// Region masks of one NearFarMix blend, each `[H,W,1]` with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct NearFarMasks {
    pub thr: f64,
    /// `M1`: first sample is near.
    pub near: Tensor,
    /// `M2`: partner is far.
    pub pre_far: Tensor,
    /// `Mo = M1·M2`.
    pub overlap: Tensor,
    /// `Me = (1 − M1)(1 − M2)`.
    pub exclusive: Tensor,
}

impl NearFarMasks {
    pub fn compute(d1: &Tensor, d2: &Tensor, thr: f64) -> Result<Self> {
        let indicator = |b: bool| if b { 1.0 } else { 0.0 };
        let near = d1.map(|d| indicator(d <= thr));
        let pre_far = d2.map(|d| indicator(d > thr));
        let overlap = near.zip_map(&pre_far, |a, b| a * b)?;
        let exclusive = near.zip_map(&pre_far, |a, b| (1.0 - a) * (1.0 - b))?;
        Ok(Self { thr, near, pre_far, overlap, exclusive })
    }

    /// Applies the blend to one plane. The far part is summed first, so
    /// every output value is copied exactly from one source.
    pub fn blend(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
        let (h, w) = (self.near.shape()[0], self.near.shape()[1]);
        if x1.shape() != x2.shape() || x1.shape()[..2] != [h, w] {
            return Err(Error::Shape { op: "nearfarmix", lhs: x1.shape().to_vec(), rhs: x2.shape().to_vec() });
        }
        let c = x1.shape()[2];
        let (m1, m2, mo, me) = (self.near.data(), self.pre_far.data(), self.overlap.data(), self.exclusive.data());
        let data = (0..x1.len())
            .map(|i| {
                let p = i / c;
                let (a, b) = (x1.data()[i], x2.data()[i]);
                let far = b * m2[p] + b * me[p] - b * mo[p];
                a * m1[p] + far
            })
            .collect();
        Tensor::new(x1.shape().to_vec(), data)
    }
}

/// Dataset bounds `[D_min, D_max]` and batch bounds `[d_min, d_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRange {
    pub dataset_min: f64,
    pub dataset_max: f64,
    pub batch_min: f64,
    pub batch_max: f64,
}

impl ThresholdRange {
    /// `d_min` is the largest per-image minimum valid depth and `d_max` the
    /// smallest per-image maximum, so `thr` lies inside every image's range.
    /// `None` if some image has no valid depth.
    pub fn from_batch(dataset_min: f64, dataset_max: f64, batch: &[Sample]) -> Option<Self> {
        let mut batch_min = f64::NEG_INFINITY;
        let mut batch_max = f64::INFINITY;
        for s in batch {
            let (lo, hi) = s.valid_depth_range()?;
            batch_min = batch_min.max(lo);
            batch_max = batch_max.min(hi);
        }
        Some(Self { dataset_min, dataset_max, batch_min, batch_max })
    }

    /// `[max(D_min, d_min), min(D_max, d_max)]`, or `None` when empty.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let lo = self.dataset_min.max(self.batch_min);
        let hi = self.dataset_max.min(self.batch_max);
        (lo < hi).then_some((lo, hi))
    }
}

pub fn sample_threshold(range: &ThresholdRange, rng: &mut impl Rng) -> Option<f64> {
    range.interval().map(|(lo, hi)| rng.random_range(lo..hi))
}

/// Shifts the batch by one: output `i` is input `(i − 1) mod B`.
pub fn roll_batch(batch: &[Sample]) -> Result<Vec<Sample>> {
    let Some(last) = batch.last() else {
        return Err(Error::invalid("roll_batch on an empty batch"));
    };
    let mut out = Vec::with_capacity(batch.len());
    out.push(last.clone());
    out.extend_from_slice(&batch[..batch.len() - 1]);
    Ok(out)
}

/// Blends `s1` (near) with `s2` (far) at threshold `thr`.
pub fn nearfarmix(s1: &Sample, s2: &Sample, thr: f64) -> Result<(Sample, NearFarMasks)> {
    if !thr.is_finite() {
        return Err(Error::invalid(format!("threshold {thr} is not finite")));
    }
    if s1.image.shape() != s2.image.shape() {
        return Err(Error::Shape { op: "nearfarmix", lhs: s1.image.shape().to_vec(), rhs: s2.image.shape().to_vec() });
    }
    let masks = NearFarMasks::compute(&s1.depth, &s2.depth, thr)?;
    let mixed = Sample {
        image: masks.blend(&s1.image, &s2.image)?,
        depth: masks.blend(&s1.depth, &s2.depth)?,
        semantics: masks.blend(&s1.semantics, &s2.semantics)?,
    };
    Ok((mixed, masks))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixConfig {
    /// Probability that a batch is mixed at all.
    pub p_apply: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl MixConfig {
    /// NYUv2-style bounds, 1.5 m to 6.5 m.
    pub fn indoor() -> Self {
        Self { p_apply: 0.5, depth_min: 1.5, depth_max: 6.5 }
    }

    /// KITTI-style bounds, 20 m to 60 m.
    pub fn outdoor() -> Self {
        Self { p_apply: 0.5, depth_min: 20.0, depth_max: 60.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutcome {
    pub samples: Vec<Sample>,
    /// Per-sample thresholds when the batch was mixed. Sample `i` took its
    /// far region from input `(i − 1) mod B`.
    pub thresholds: Option<Vec<f64>>,
}

/// Batchwise NearFarMix. Batches of one, a failed `p_apply` draw or an empty
/// threshold interval leave the batch unchanged.
pub fn nearfarmix_batch(batch: &[Sample], cfg: &MixConfig, rng: &mut impl Rng) -> Result<MixOutcome> {
    let unchanged = || MixOutcome { samples: batch.to_vec(), thresholds: None };
    if batch.len() < 2 {
        return Ok(unchanged());
    }
    let coin: f64 = rng.random();
    if coin >= cfg.p_apply {
        return Ok(unchanged());
    }
    let Some(range) = ThresholdRange::from_batch(cfg.depth_min, cfg.depth_max, batch) else {
        return Ok(unchanged());
    };
    if range.interval().is_none() {
        return Ok(unchanged());
    }
    let partners = roll_batch(batch)?;
    let mut samples = Vec::with_capacity(batch.len());
    let mut thresholds = Vec::with_capacity(batch.len());
    for (s1, s2) in batch.iter().zip(&partners) {
        let thr = sample_threshold(&range, rng).expect("interval checked non-empty");
        samples.push(nearfarmix(s1, s2, thr)?.0);
        thresholds.push(thr);
    }
    Ok(MixOutcome { samples, thresholds: Some(thresholds) })
}

/// Mirrors all three planes along the width axis.
pub fn horizontal_flip(s: &Sample) -> Sample {
    Sample {
        image: flip_axis(&s.image, 1),
        depth: flip_axis(&s.depth, 1),
        semantics: flip_axis(&s.semantics, 1),
    }
}

/// Blends the image toward its per-pixel channel mean by `amount` in [0, 1].
pub fn grayscale(s: &Sample, amount: f64) -> Sample {
    let mut image = s.image.clone();
    for px in image.data_mut().chunks_mut(3) {
        let mean = px.iter().sum::<f64>() / 3.0;
        px.iter_mut().for_each(|v| *v += amount * (mean - *v));
    }
    Sample { image, ..s.clone() }
}

/// Scales the image by `factor`, clipped to [0, 1].
pub fn brightness(s: &Sample, factor: f64) -> Sample {
    Sample { image: s.image.map(|v| (v * factor).clamp(0.0, 1.0)), ..s.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricConfig {
    pub flip_prob: f64,
    pub grayscale_prob: f64,
    /// Brightness factor range for the jitter.
    pub brightness: (f64, f64),
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, grayscale_prob: 0.1, brightness: (0.9, 1.1) }
    }
}

impl PhotometricConfig {
    pub fn disabled() -> Self {
        Self { flip_prob: 0.0, grayscale_prob: 0.0, brightness: (1.0, 1.0) }
    }
}

/// Random flip, grayscale and brightness jitter.
pub fn photometric(s: &Sample, cfg: &PhotometricConfig, rng: &mut impl Rng) -> Sample {
    let mut out = if rng.random::<f64>() < cfg.flip_prob { horizontal_flip(s) } else { s.clone() };
    if rng.random::<f64>() < cfg.grayscale_prob {
        out = grayscale(&out, 1.0);
    }
    let (lo, hi) = cfg.brightness;
    if hi > lo {
        out = brightness(&out, rng.random_range(lo..hi));
    }
    out
}
