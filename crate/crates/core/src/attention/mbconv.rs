use rand::Rng;

use crate::error::Result;
use crate::layers::{Conv2d, ConvSpec, Linear};
use crate::params::{Bound, Builder};
use crate::tensor::Var;

/// Squeeze-excitation reduction ratio.
pub const SE_RATIO: usize = 4;

/// Depthwise 3×3 conv → GELU → squeeze-excitation → pointwise conv, with a
/// residual around the whole block.
#[derive(Clone, Debug)]
pub struct FusedMbConv {
    pub depthwise: Conv2d,
    pub se_reduce: Linear,
    pub se_expand: Linear,
    pub pointwise: Conv2d,
}

impl FusedMbConv {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, channels: usize) -> Result<Self> {
        let hidden = (channels / SE_RATIO).max(1);
        Ok(Self {
            depthwise: Conv2d::new(b, &format!("{prefix}.dw"), ConvSpec::new(channels, channels, 3).groups(channels))?,
            se_reduce: Linear::new(b, &format!("{prefix}.se_reduce"), channels, hidden, true)?,
            se_expand: Linear::new(b, &format!("{prefix}.se_expand"), hidden, channels, true)?,
            pointwise: Conv2d::new(b, &format!("{prefix}.pw"), ConvSpec::new(channels, channels, 1))?,
        })
    }

    /// Per-channel gate in (0, 1), shape `[B, 1, 1, C]`.
    pub fn se_gate<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let squeezed = x.mean_axes(&[1, 2])?;
        let hidden = self.se_reduce.forward(p, squeezed)?.gelu()?;
        self.se_expand.forward(p, hidden)?.sigmoid()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let h = self.depthwise.forward(p, y)?.gelu()?;
        let gate = self.se_gate(p, h)?;
        let h = self.pointwise.forward(p, h.mul(gate)?)?;
        y.add(h)
    }
}
