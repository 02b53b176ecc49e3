//! Training objectives: scale-invariant log depth loss, soft Jaccard loss on
//! class probabilities, and their sum.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Predictions are clamped to this before taking logs.
pub const LOG_CLAMP: f64 = 1e-6;
/// Added under the square root of the depth loss.
pub const SQRT_EPS: f64 = 1e-12;
/// Added to every soft union.
pub const UNION_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.85, alpha: 10.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub depth_loss: f64,
    pub semantic_loss: f64,
    pub total_loss: f64,
}

impl LossReport {
    pub fn new(depth_loss: f64, semantic_loss: f64) -> Self {
        Self { depth_loss, semantic_loss, total_loss: total_loss(depth_loss, semantic_loss) }
    }
}

pub fn total_loss(depth_loss: f64, semantic_loss: f64) -> f64 {
    depth_loss + semantic_loss
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() });
    }
    Ok(())
}

/// `α·(sqrt(mean g² − λ·(mean g)² + ε) − sqrt(ε))` with
/// `g = ln max(pred, 1e-6) − ln gt` over pixels where `valid_mask` is 1.
///
/// The `sqrt(ε)` offset makes a perfect prediction score exactly zero while
/// keeping the gradient finite there.
pub fn si_loss<'t>(pred: Var<'t>, gt: &Tensor, valid_mask: &Tensor, cfg: &LossConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let shape = pred.shape();
    same_shape("si_loss", &shape, gt.shape())?;
    same_shape("si_loss", &shape, valid_mask.shape())?;
    let count = valid_mask.data().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::invalid("si_loss: no valid ground-truth pixels"));
    }
    for (&m, &d) in valid_mask.data().iter().zip(gt.data()) {
        if m != 0.0 && m != 1.0 {
            return Err(Error::invalid(format!("si_loss: mask value {m} is not binary")));
        }
        if m == 1.0 && !(d > 0.0) {
            return Err(Error::invalid(format!("si_loss: valid pixel has ground truth {d}")));
        }
    }
    let tape = pred.tape();
    let log_gt = gt.zip_map(valid_mask, |d, m| if m == 1.0 { d.ln() } else { 0.0 })?;
    let mask = tape.constant(valid_mask.clone());
    let g = pred.clamp_min(LOG_CLAMP)?.ln()?.sub(tape.constant(log_gt))?.mul(mask)?;
    let t = count as f64;
    let mean_g = g.sum()?.scale(1.0 / t)?;
    let mean_g2 = g.square()?.sum()?.scale(1.0 / t)?;
    let var = mean_g2.sub(mean_g.square()?.scale(cfg.lambda)?)?;
    var.clamp_min(0.0)?
        .add_scalar(SQRT_EPS)?
        .sqrt()?
        .add_scalar(-SQRT_EPS.sqrt())?
        .scale(cfg.alpha)
}

/// Converts class indices `[.., 1]` into a one-hot tensor `[.., C]` and a
/// validity mask `[.., 1]`. Indices `>= classes` (the ignore sentinel) get
/// an all-zero row and mask 0.
pub fn one_hot(labels: &Tensor, classes: usize) -> Result<(Tensor, Tensor)> {
    let shape = labels.shape();
    if shape.last() != Some(&1) {
        return Err(Error::invalid(format!("one_hot expects a trailing unit axis, got {shape:?}")));
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = classes;
    let mut data = vec![0.0; labels.len() * classes];
    let mut mask = vec![0.0; labels.len()];
    for (i, &l) in labels.data().iter().enumerate() {
        if l < 0.0 || l.fract() != 0.0 {
            return Err(Error::invalid(format!("label {l} is not a class index")));
        }
        let c = l as usize;
        if c < classes {
            data[i * classes + c] = 1.0;
            mask[i] = 1.0;
        }
    }
    Ok((Tensor::new(out_shape, data)?, Tensor::new(shape.to_vec(), mask)?))
}

/// `1 − mean_c I_c / (U_c + ε)` with soft intersection `Σ p·g` and union
/// `Σ p + g − p·g`, summed over pixels. The mean runs over classes present in
/// the ground truth; with none present the loss is 0.
pub fn jaccard_loss<'t>(pred_probs: Var<'t>, gt_onehot: &Tensor) -> Result<Var<'t>> {
    let shape = pred_probs.shape();
    let mut mask_shape = shape.clone();
    if let Some(last) = mask_shape.last_mut() {
        *last = 1;
    }
    jaccard_loss_masked(pred_probs, gt_onehot, &Tensor::ones(mask_shape))
}

/// [`jaccard_loss`] restricted to pixels where `valid_mask` (`[.., 1]`) is 1.
pub fn jaccard_loss_masked<'t>(pred_probs: Var<'t>, gt_onehot: &Tensor, valid_mask: &Tensor) -> Result<Var<'t>> {
    let shape = pred_probs.shape();
    same_shape("jaccard_loss", &shape, gt_onehot.shape())?;
    let rank = shape.len();
    if rank < 2 {
        return Err(Error::invalid(format!("jaccard_loss expects [.., C], got {shape:?}")));
    }
    let mut mask_shape = shape.clone();
    mask_shape[rank - 1] = 1;
    same_shape("jaccard_loss", &mask_shape, valid_mask.shape())?;
    let classes = shape[rank - 1];
    let pixels = gt_onehot.len() / classes;

    let gt_m = gt_onehot.zip_map(&broadcast_last(valid_mask, classes)?, |g, m| g * m)?;
    let mut present = vec![0.0; classes];
    for (i, &g) in gt_m.data().iter().enumerate() {
        if g != 0.0 {
            present[i % classes] = 1.0;
        }
    }
    let n_present = present.iter().sum::<f64>();
    let tape = pred_probs.tape();
    if n_present == 0.0 {
        return Ok(pred_probs.sum()?.scale(0.0)?);
    }

    let axes: Vec<usize> = (0..rank - 1).collect();
    let p = pred_probs.mul(tape.constant(valid_mask.clone()))?;
    let g = tape.constant(gt_m);
    let pg = p.mul(g)?;
    let n = pixels as f64;
    let inter = pg.mean_axes(&axes)?.scale(n)?;
    let union = p.add(g)?.sub(pg)?.mean_axes(&axes)?.scale(n)?.add_scalar(UNION_EPS)?;
    let iou = inter.div(union)?;
    let mut weights_shape = vec![1; rank];
    weights_shape[rank - 1] = classes;
    let weights = Tensor::new(weights_shape, present.iter().map(|w| w / n_present).collect())?;
    iou.mul(tape.constant(weights))?.sum()?.scale(-1.0)?.add_scalar(1.0)
}

fn broadcast_last(mask: &Tensor, classes: usize) -> Result<Tensor> {
    let mut shape = mask.shape().to_vec();
    *shape.last_mut().unwrap() = classes;
    let data = mask.data().iter().flat_map(|&m| std::iter::repeat_n(m, classes)).collect();
    Tensor::new(shape, data)
}

/// Targets for one batch: metric depth (0 = invalid) and class indices, both
/// `[B, H, W, 1]`.
#[derive(Clone, Debug)]
pub struct Targets {
    pub depth: Tensor,
    pub labels: Tensor,
}

/// Depth loss plus semantic loss for a batch of predictions.
pub fn joint_loss<'t>(
    depth: Var<'t>,
    semantics: Var<'t>,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<(Var<'t>, LossReport)> {
    let valid = targets.depth.map(|d| if d > 0.0 { 1.0 } else { 0.0 });
    let depth_l = si_loss(depth, &targets.depth, &valid, cfg)?;
    let classes = *semantics.shape().last().expect("rank checked by model");
    let (onehot, sem_valid) = one_hot(&targets.labels, classes)?;
    let sem_l = jaccard_loss_masked(semantics, &onehot, &sem_valid)?;
    let report = LossReport::new(depth_l.value().item(), sem_l.value().item());
    Ok((depth_l.add(sem_l)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use approx::assert_abs_diff_eq;

    fn si(pred: Tensor, gt: &Tensor, cfg: &LossConfig) -> f64 {
        let tape = Tape::new();
        let mask = Tensor::ones(gt.shape().to_vec());
        si_loss(tape.var(pred), gt, &mask, cfg).unwrap().value().item()
    }

    #[test]
    fn si_perfect_prediction_is_zero() {
        let gt = Tensor::from_fn([1, 3, 3, 1], |i| 1.0 + i[1] as f64 + 0.5 * i[2] as f64);
        assert_eq!(si(gt.clone(), &gt, &LossConfig::default()), 0.0);
    }

    #[test]
    fn si_single_pixel_closed_form() {
        let v = si(Tensor::full([1, 1, 1, 1], 2.0), &Tensor::full([1, 1, 1, 1], 1.0), &LossConfig::default());
        let expected = 10.0 * 2f64.ln() * 0.15f64.sqrt();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 2.6844, epsilon = 1e-3);
    }

    #[test]
    fn si_ignores_invalid_pixels() {
        let gt = Tensor::new([1, 1, 2, 1], vec![1.0, 0.0]).unwrap();
        let mask = Tensor::new([1, 1, 2, 1], vec![1.0, 0.0]).unwrap();
        let tape = Tape::new();
        let a = si_loss(tape.var(Tensor::new([1, 1, 2, 1], vec![2.0, 5.0]).unwrap()), &gt, &mask, &LossConfig::default())
            .unwrap();
        let b = si_loss(tape.var(Tensor::new([1, 1, 2, 1], vec![2.0, 0.1]).unwrap()), &gt, &mask, &LossConfig::default())
            .unwrap();
        assert_eq!(a.value().item(), b.value().item());
        let none = Tensor::zeros([1, 1, 2, 1]);
        assert!(si_loss(tape.var(gt.clone()), &gt, &none, &LossConfig::default()).is_err());
    }

    fn jac(pred: &[f64], gt: &[f64], c: usize) -> f64 {
        let n = pred.len() / c;
        let tape = Tape::new();
        let p = tape.var(Tensor::new([1, 1, n, c], pred.to_vec()).unwrap());
        jaccard_loss(p, &Tensor::new([1, 1, n, c], gt.to_vec()).unwrap()).unwrap().value().item()
    }

    #[test]
    fn jaccard_examples() {
        assert_abs_diff_eq!(jac(&[1.0, 0.0, 0.5, 0.5], &[1.0, 0.0, 0.0, 1.0], 2), 5.0 / 12.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0], 2), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(jac(&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn one_hot_marks_sentinel_invalid() {
        let labels = Tensor::new([3, 1], vec![0.0, 2.0, 1.0]).unwrap();
        let (oh, m) = one_hot(&labels, 2).unwrap();
        assert_eq!(oh.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn totals_add() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(LossReport::new(2.5, 0.4).total_loss, 2.9, epsilon = 1e-12);
    }
}
