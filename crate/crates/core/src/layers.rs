//! Parameterized building blocks shared by the attention and model modules.

use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, Builder};
use crate::tensor::{Padding, Var};

pub const LN_EPS: f64 = 1e-5;

/// Layer normalization over the channel axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.ones(&format!("{prefix}.gamma"), &[dim])?,
            beta: b.zeros(&format!("{prefix}.beta"), &[dim])?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(p.get(&self.gamma)?, p.get(&self.beta)?, LN_EPS)
    }
}

/// Dense projection over the last axis: `x · W (+ b)`, `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: b.weight(&format!("{prefix}.weight"), &[din, dout])?,
            bias: if bias { Some(b.zeros(&format!("{prefix}.bias"), &[dout])?) } else { None },
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p.get(&self.weight)?)?;
        match &self.bias {
            Some(b) => y.add(p.get(b)?),
            None => Ok(y),
        }
    }
}

/// NHWC convolution with optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: String,
    pub bias: Option<String>,
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, k, stride: 1, groups: 1, bias: true }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

impl Conv2d {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, spec: ConvSpec) -> Result<Self> {
        Ok(Self {
            kernel: b.weight(&format!("{prefix}.kernel"), &[spec.k, spec.k, spec.cin / spec.groups, spec.cout])?,
            bias: if spec.bias { Some(b.zeros(&format!("{prefix}.bias"), &[spec.cout])?) } else { None },
            stride: spec.stride,
            padding: Padding::Same,
            groups: spec.groups,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.conv2d(p.get(&self.kernel)?, self.stride, self.padding, self.groups)?;
        match &self.bias {
            Some(b) => y.add(p.get(b)?),
            None => Ok(y),
        }
    }
}

/// `GELU(LayerNorm(Conv(x)))`, the unit used by the stem, decoder and necks.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub norm: LayerNorm,
}

impl ConvNormAct {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, spec: ConvSpec) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(b, &format!("{prefix}.conv"), spec)?,
            norm: LayerNorm::new(b, &format!("{prefix}.norm"), spec.cout)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.norm.forward(p, self.conv.forward(p, x)?)?.gelu()
    }
}
