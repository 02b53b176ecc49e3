//! Toy-scale joint depth/semantics network.
//!
//! ```text
//! image ─ stem (/2) ─ stage1 (/4) ─ stage2 (/8) ─ stage3 (/16) ─ stage4 (/32)
//!                        │E1           │E2           │E3             │E4 = D4
//!                        D1 ◄──────── D2 ◄───────── D3 ◄─────────────┘
//!                        │
//!            depth neck ─┴─ semantics neck
//!                  └─ symbiotic transformer ─┘
//!            depth head (×4)       semantics head (×4)
//! ```
//!
//! Each encoder stage is a stride-2 conv followed by blocks of fused MBConv,
//! block self-attention and grid self-attention. Each decoder step upsamples,
//! concatenates the skip feature and applies conv → LayerNorm → GELU.

use rand::Rng;

use crate::attention::{AttentionConfig, FusedMbConv, PartitionedAttention, SymbioticTransformer};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvNormAct, ConvSpec, LayerNorm};
use crate::params::{Bound, Builder, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub neck_channels: usize,
    pub class_count: usize,
    /// Depth head output range in meters.
    pub max_depth: f64,
    /// Settings of the symbiotic transformer; the encoder reuses heads and
    /// rounds with its own channel counts.
    pub attention: AttentionConfig,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    /// 64×64 input, small channel counts.
    pub fn toy() -> Self {
        Self {
            stage_channels: [8, 16, 16, 32],
            stage_depths: [1, 1, 1, 1],
            neck_channels: 16,
            class_count: 8,
            max_depth: 10.0,
            attention: AttentionConfig { heads: 2, head_dim: 8, window: (4, 4), grid: (4, 4), ns: 2 },
            height: 64,
            width: 64,
        }
    }

    /// Smallest configuration: 32×32 input, channels [4, 4, 8, 8].
    pub fn min_toy() -> Self {
        Self {
            stage_channels: [4, 4, 8, 8],
            stage_depths: [1, 1, 1, 1],
            neck_channels: 8,
            class_count: 4,
            max_depth: 10.0,
            attention: AttentionConfig { heads: 2, head_dim: 4, window: (2, 2), grid: (2, 2), ns: 2 },
            height: 32,
            width: 32,
        }
    }

    /// Spatial size of encoder output `E_i`, `i ∈ 0..=4` (E0 is the stem).
    pub fn level_size(&self, i: usize) -> (usize, usize) {
        (self.height >> (i + 1), self.width >> (i + 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} must be a positive multiple of 32",
                self.height, self.width
            )));
        }
        if self.class_count < 2 {
            return Err(Error::invalid(format!("class_count must be >= 2, got {}", self.class_count)));
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return Err(Error::invalid(format!("max_depth must be positive, got {}", self.max_depth)));
        }
        if self.stage_channels.contains(&0) || self.neck_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        self.attention.validate()?;
        if self.attention.channels() != self.neck_channels {
            return Err(Error::invalid(format!(
                "attention heads*head_dim = {} must equal neck_channels = {}",
                self.attention.channels(),
                self.neck_channels
            )));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            let (h, w) = self.level_size(i + 1);
            self.attention.adapted(c, h, w)?;
        }
        let (h, w) = self.level_size(1);
        self.attention.validate_resolution(h, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Depth,
    Semantics,
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub mbconv: FusedMbConv,
    pub block: PartitionedAttention,
    pub grid: PartitionedAttention,
}

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub down: Conv2d,
    pub down_norm: LayerNorm,
    pub blocks: Vec<EncoderBlock>,
}

/// Encoder outputs `E0..E4` and decoder outputs `D4..D1`.
pub struct FeaturePyramid<'t> {
    pub encoder: Vec<Var<'t>>,
    pub decoder: Vec<Var<'t>>,
}

impl<'t> FeaturePyramid<'t> {
    /// Final decoder output `D1`.
    pub fn d1(&self) -> Var<'t> {
        *self.decoder.last().expect("decoder populated")
    }
}

pub struct ModelOutput<'t> {
    /// `[B, H, W, 1]` in `[0, max_depth]`.
    pub depth: Var<'t>,
    /// `[B, H, W, C_s]`, per-pixel probabilities.
    pub semantics: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub stem: [ConvNormAct; 2],
    pub stages: Vec<EncoderStage>,
    /// Steps producing D3, D2, D1.
    pub decoder: Vec<ConvNormAct>,
    pub depth_neck: [ConvNormAct; 2],
    pub semantic_neck: [ConvNormAct; 2],
    pub symbiotic: SymbioticTransformer,
    pub depth_head: Conv2d,
    pub semantic_head: Conv2d,
}

impl Model {
    /// Builds the model and its freshly initialized parameters.
    pub fn new<R: Rng>(cfg: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, rng);
        let ch = cfg.stage_channels;
        let c0 = ch[0];

        let stem = [
            ConvNormAct::new(&mut b, "stem.0", ConvSpec::new(3, c0, 3).stride(2))?,
            ConvNormAct::new(&mut b, "stem.1", ConvSpec::new(c0, c0, 3))?,
        ];

        let mut stages = Vec::with_capacity(4);
        let mut cin = c0;
        for (i, (&c, &depth)) in ch.iter().zip(&cfg.stage_depths).enumerate() {
            let (h, w) = cfg.level_size(i + 1);
            let acfg = cfg.attention.adapted(c, h, w)?;
            let prefix = format!("encoder.{i}");
            let down = Conv2d::new(&mut b, &format!("{prefix}.down"), ConvSpec::new(cin, c, 3).stride(2))?;
            let down_norm = LayerNorm::new(&mut b, &format!("{prefix}.down_norm"), c)?;
            let blocks = (0..depth)
                .map(|j| {
                    let p = format!("{prefix}.block{j}");
                    Ok(EncoderBlock {
                        mbconv: FusedMbConv::new(&mut b, &format!("{p}.mbconv"), c)?,
                        block: PartitionedAttention::new(&mut b, &format!("{p}.block_attn"), &acfg, acfg.window_spec(), true)?,
                        grid: PartitionedAttention::new(&mut b, &format!("{p}.grid_attn"), &acfg, acfg.grid_spec(), true)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(EncoderStage { down, down_norm, blocks });
            cin = c;
        }

        // D3 = step(D4, E3), D2 = step(D3, E2), D1 = step(D2, E1)
        let decoder = [2usize, 1, 0]
            .iter()
            .map(|&i| {
                let prev = ch[i + 1];
                ConvNormAct::new(&mut b, &format!("decoder.{}", i + 1), ConvSpec::new(ch[i] + prev, ch[i], 3))
            })
            .collect::<Result<Vec<_>>>()?;

        let cn = cfg.neck_channels;
        let neck = |b: &mut Builder<'_, R>, name: &str| -> Result<[ConvNormAct; 2]> {
            Ok([
                ConvNormAct::new(b, &format!("{name}.0"), ConvSpec::new(ch[0], cn, 3))?,
                ConvNormAct::new(b, &format!("{name}.1"), ConvSpec::new(cn, cn, 3))?,
            ])
        };
        let depth_neck = neck(&mut b, "neck.depth")?;
        let semantic_neck = neck(&mut b, "neck.semantics")?;
        let symbiotic = SymbioticTransformer::new(&mut b, "dss", &cfg.attention)?;
        let depth_head = Conv2d::new(&mut b, "head.depth", ConvSpec::new(cn, 1, 3))?;
        let semantic_head = Conv2d::new(&mut b, "head.semantics", ConvSpec::new(cn, cfg.class_count, 3))?;

        let model = Self { cfg, stem, stages, decoder, depth_neck, semantic_neck, symbiotic, depth_head, semantic_head };
        Ok((model, store))
    }

    pub fn stem_forward<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<Var<'t>> {
        match image.shape()[..] {
            [_, h, w, 3] if h % 2 == 0 && w % 2 == 0 => {}
            ref s => return Err(Error::invalid(format!("stem expects [B,H,W,3] with even H, W; got {s:?}"))),
        }
        let x = self.stem[0].forward(p, image)?;
        self.stem[1].forward(p, x)
    }

    /// Returns `[E1, E2, E3, E4]`.
    pub fn encoder_forward<'t>(&self, p: &Bound<'t>, e0: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut x = e0;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            x = stage.down_norm.forward(p, stage.down.forward(p, x)?)?;
            for blk in &stage.blocks {
                x = blk.mbconv.forward(p, x)?;
                x = blk.block.forward(p, x, x)?;
                x = blk.grid.forward(p, x, x)?;
            }
            outs.push(x);
        }
        Ok(outs)
    }

    /// One decoder level: `GELU(LN(Conv3x3(concat(E_skip, up(D_prev)))))`.
    /// `step` 0, 1, 2 produce D3, D2, D1.
    pub fn decoder_step<'t>(&self, step: usize, p: &Bound<'t>, d_prev: Var<'t>, e_skip: Var<'t>) -> Result<Var<'t>> {
        let unit = self
            .decoder
            .get(step)
            .ok_or_else(|| Error::invalid(format!("decoder step {step} out of range")))?;
        let up = d_prev.upsample_bilinear(2)?;
        let (us, es) = (up.shape(), e_skip.shape());
        if us[..3] != es[..3] {
            return Err(Error::Shape { op: "decoder_step", lhs: us, rhs: es });
        }
        let merged = Var::concat_last(&[e_skip, up])?;
        unit.forward(p, merged)
    }

    pub fn neck_forward<'t>(&self, task: Task, p: &Bound<'t>, d1: Var<'t>) -> Result<Var<'t>> {
        let neck = match task {
            Task::Depth => &self.depth_neck,
            Task::Semantics => &self.semantic_neck,
        };
        neck[1].forward(p, neck[0].forward(p, d1)?)
    }

    /// Necks followed by the symbiotic transformer; returns `(F_d, F_s)`.
    pub fn dss_forward<'t>(&self, p: &Bound<'t>, d1: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let f_d = self.neck_forward(Task::Depth, p, d1)?;
        let f_s = self.neck_forward(Task::Semantics, p, d1)?;
        self.symbiotic.forward(p, f_d, f_s)
    }

    pub fn head_forward<'t>(&self, task: Task, p: &Bound<'t>, f: Var<'t>) -> Result<Var<'t>> {
        match task {
            Task::Depth => self
                .depth_head
                .forward(p, f)?
                .sigmoid()?
                .upsample_bilinear(4)?
                .scale(self.cfg.max_depth),
            Task::Semantics => self.semantic_head.forward(p, f)?.softmax(-1)?.upsample_bilinear(4),
        }
    }

    pub fn pyramid<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<FeaturePyramid<'t>> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        match image.shape()[..] {
            [_, ih, iw, 3] if ih == h && iw == w => {}
            ref s => return Err(Error::invalid(format!("model expects [B,{h},{w},3], got {s:?}"))),
        }
        let e0 = self.stem_forward(p, image)?;
        let mut encoder = vec![e0];
        encoder.extend(self.encoder_forward(p, e0)?);
        let mut decoder = vec![encoder[4]];
        for (step, skip) in [3usize, 2, 1].into_iter().enumerate() {
            let prev = *decoder.last().unwrap();
            decoder.push(self.decoder_step(step, p, prev, encoder[skip])?);
        }
        Ok(FeaturePyramid { encoder, decoder })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<ModelOutput<'t>> {
        let pyr = self.pyramid(p, image)?;
        let (f_d, f_s) = self.dss_forward(p, pyr.d1())?;
        Ok(ModelOutput {
            depth: self.head_forward(Task::Depth, p, f_d)?,
            semantics: self.head_forward(Task::Semantics, p, f_s)?,
        })
    }

    /// Parameters that close every residual branch of the symbiotic
    /// transformer; zeroing them makes the DSS the identity on neck outputs.
    pub fn dss_residual_outputs(&self) -> Vec<String> {
        self.symbiotic.residual_outputs()
    }
}
