//! AdamW with decoupled weight decay and a constant learning rate.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && [self.lr, self.eps, self.weight_decay].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, step: 0, moments: IndexMap::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` maps parameter names to gradients; names
    /// without a gradient only receive weight decay.
    pub fn step<'a>(&mut self, params: &mut ParamStore, grads: impl Fn(&str) -> Option<&'a Tensor>) -> Result<()> {
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, value) in params.iter_mut() {
            let decay = 1.0 - lr * weight_decay;
            let Some(g) = grads(name) else {
                value.data_mut().iter_mut().for_each(|w| *w *= decay);
                continue;
            };
            if g.shape() != value.shape() {
                return Err(Error::Shape { op: "adamw", lhs: value.shape().to_vec(), rhs: g.shape().to_vec() });
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *w = *w * decay - lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new([2], vec![1.0, -1.0]).unwrap()).unwrap();
        let g = Tensor::new([2], vec![0.5, -3.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
        opt.step(&mut store, |_| Some(&g)).unwrap();
        let w = store.get("w").unwrap().data();
        assert_abs_diff_eq!(w[0], 1.0 - 1e-3, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1], -1.0 + 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full([1], 2.0)).unwrap();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() }).unwrap();
        opt.step(&mut store, |_| None).unwrap();
        assert_abs_diff_eq!(store.get("w").unwrap().item(), 2.0 * 0.95, epsilon = 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full([1], 3.0)).unwrap();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() }).unwrap();
        for _ in 0..500 {
            let g = store.get("w").unwrap().map(|w| 2.0 * w);
            opt.step(&mut store, |_| Some(&g)).unwrap();
        }
        assert!(store.get("w").unwrap().item().abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AdamW::new(AdamWConfig { beta1: 1.0, ..Default::default() }).is_err());
        assert!(AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }).is_err());
    }
}
