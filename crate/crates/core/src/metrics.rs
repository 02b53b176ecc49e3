//! Evaluation metrics for depth and semantics.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Base of the threshold accuracies `δ_i = P(max(p/g, g/p) < 1.25^i)`.
pub const DELTA_BASE: f64 = 1.25;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rms: f64,
    pub log10: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Running sums over valid pixels; metrics pool all pixels seen.
#[derive(Clone, Debug, Default)]
pub struct DepthAccumulator {
    count: usize,
    abs_rel: f64,
    sq: f64,
    log10: f64,
    sq_log: f64,
    delta: [usize; 3],
}

impl DepthAccumulator {
    /// Adds pixels where `valid_mask != 0`. Predictions are clamped at 1e-6
    /// before logs and ratios.
    pub fn add(&mut self, pred: &Tensor, gt: &Tensor, valid_mask: &Tensor) -> Result<()> {
        for other in [gt, valid_mask] {
            if pred.shape() != other.shape() {
                return Err(Error::Shape { op: "depth_metrics", lhs: pred.shape().to_vec(), rhs: other.shape().to_vec() });
            }
        }
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(valid_mask.data()) {
            if m == 0.0 {
                continue;
            }
            if !(g > 0.0) {
                return Err(Error::invalid(format!("depth_metrics: valid pixel has ground truth {g}")));
            }
            let p = p.max(crate::losses::LOG_CLAMP);
            self.count += 1;
            self.abs_rel += (p - g).abs() / g;
            self.sq += (p - g).powi(2);
            self.log10 += (p.log10() - g.log10()).abs();
            self.sq_log += (p.ln() - g.ln()).powi(2);
            let ratio = (p / g).max(g / p);
            for (i, d) in self.delta.iter_mut().enumerate() {
                if ratio < DELTA_BASE.powi(i as i32 + 1) {
                    *d += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DepthMetrics> {
        if self.count == 0 {
            return Err(Error::invalid("depth_metrics: no valid pixels"));
        }
        let n = self.count as f64;
        Ok(DepthMetrics {
            abs_rel: self.abs_rel / n,
            rms: (self.sq / n).sqrt(),
            log10: self.log10 / n,
            rms_log: (self.sq_log / n).sqrt(),
            delta1: self.delta[0] as f64 / n,
            delta2: self.delta[1] as f64 / n,
            delta3: self.delta[2] as f64 / n,
        })
    }
}

pub fn depth_metrics(pred: &Tensor, gt: &Tensor, valid_mask: &Tensor) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt, valid_mask)?;
    acc.finish()
}

/// Index of the largest entry along the last axis for every pixel. Ties
/// resolve to the lowest index.
pub fn argmax_last(probs: &Tensor) -> Vec<usize> {
    let c = *probs.shape().last().expect("tensor has rank >= 1");
    probs
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Confusion counts for hard labels. Ground-truth labels `>= classes` are
/// ignored.
#[derive(Clone, Debug)]
pub struct Confusion {
    classes: usize,
    /// `counts[gt * classes + pred]`.
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape { op: "miou", lhs: vec![pred.len()], rhs: vec![gt.len()] });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g >= self.classes {
                continue;
            }
            if p >= self.classes {
                return Err(Error::invalid(format!("predicted class {p} out of range 0..{}", self.classes)));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Per-class IoU, `None` for classes absent from both prediction and
    /// ground truth.
    pub fn ious(&self) -> Vec<Option<f64>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.counts[k * c + k];
                let gt: u64 = self.counts[k * c..(k + 1) * c].iter().sum();
                let pred: u64 = (0..c).map(|g| self.counts[g * c + k]).sum();
                let union = gt + pred - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in prediction or ground truth.
    pub fn miou(&self) -> Result<f64> {
        let present: Vec<f64> = self.ious().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::invalid("miou: no labeled pixels"));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn miou(pred: &[usize], gt: &[usize], classes: usize) -> Result<f64> {
    let mut conf = Confusion::new(classes);
    conf.add(pred, gt)?;
    conf.miou()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub depth: DepthMetrics,
    pub miou: f64,
}

impl MetricsReport {
    pub fn pairs(&self) -> [(&'static str, f64); 8] {
        let d = &self.depth;
        [
            ("abs_rel", d.abs_rel),
            ("rms", d.rms),
            ("log10", d.log10),
            ("rms_log", d.rms_log),
            ("delta1", d.delta1),
            ("delta2", d.delta2),
            ("delta3", d.delta3),
            ("miou", self.miou),
        ]
    }
}

/// One `key=value` line per metric.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.pairs() {
            writeln!(f, "{k}={v:.6}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_depth() {
        let g = t(&[1.0, 2.0, 3.5]);
        let m = depth_metrics(&g, &g, &t(&[1.0; 3])).unwrap();
        assert_eq!((m.abs_rel, m.rms, m.log10, m.rms_log), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ratio_exactly_at_threshold_fails_delta1() {
        let g = t(&[1.0, 2.0, 4.0]);
        let p = t(&[1.25, 2.5, 5.0]);
        let m = depth_metrics(&p, &g, &t(&[1.0; 3])).unwrap();
        assert_eq!(m.delta1, 0.0);
        assert_eq!((m.delta2, m.delta3), (1.0, 1.0));
        assert_abs_diff_eq!(m.abs_rel, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn single_pixel_hand_values() {
        let m = depth_metrics(&t(&[2.0]), &t(&[1.0]), &t(&[1.0])).unwrap();
        assert_eq!((m.rms, m.abs_rel), (1.0, 1.0));
        assert_abs_diff_eq!(m.rms_log, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.log10, 2f64.log10(), epsilon = 1e-15);
    }

    #[test]
    fn no_valid_pixels_is_error() {
        assert!(depth_metrics(&t(&[1.0]), &t(&[1.0]), &t(&[0.0])).is_err());
    }

    #[test]
    fn miou_examples() {
        assert_eq!(miou(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(miou(&[1, 0, 0, 1], &[0, 1, 1, 0], 2).unwrap(), 0.0);
        assert_abs_diff_eq!(miou(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 7.0 / 12.0, epsilon = 1e-12);
        // ignore sentinel skipped
        assert_eq!(miou(&[0, 1], &[0, 2], 2).unwrap(), 1.0);
        assert!(miou(&[0], &[5], 2).is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        let p = Tensor::new([2, 3], vec![0.2, 0.4, 0.4, 0.5, 0.1, 0.4]).unwrap();
        assert_eq!(argmax_last(&p), vec![1, 0]);
    }

    #[test]
    fn report_lines() {
        let s = MetricsReport::default().to_string();
        assert_eq!(s.lines().count(), 8);
        assert!(s.starts_with("abs_rel=0.000000\n"));
    }
}
