//! Stacking samples into `[B, H, W, C]` batches.

use symdepth_core::augment::Sample;
use symdepth_core::losses::Targets;
use symdepth_core::tensor::Tensor;
use symdepth_core::{Error, Result};

pub struct Batch {
    pub images: Tensor,
    pub targets: Targets,
}

fn stack(planes: &[&Tensor]) -> Result<Tensor> {
    let first = planes.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let mut shape = vec![planes.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * planes.len());
    for p in planes {
        if p.shape() != first.shape() {
            return Err(Error::Shape { op: "stack", lhs: first.shape().to_vec(), rhs: p.shape().to_vec() });
        }
        data.extend_from_slice(p.data());
    }
    Tensor::new(shape, data)
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let images = stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let depth = stack(&samples.iter().map(|s| &s.depth).collect::<Vec<_>>())?;
        let labels = stack(&samples.iter().map(|s| &s.semantics).collect::<Vec<_>>())?;
        Ok(Self { images, targets: Targets { depth, labels } })
    }
}

/// Splits `[B, ...]` back into `B` tensors.
pub fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let b = t.shape()[0];
    let inner = t.shape()[1..].to_vec();
    let n = t.len() / b;
    t.data().chunks(n).map(|c| Tensor::new(inner.clone(), c.to_vec())).collect()
}
