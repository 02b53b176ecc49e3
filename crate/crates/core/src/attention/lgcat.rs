use rand::Rng;

use super::cross::PartitionedAttention;
use super::mbconv::FusedMbConv;
use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, Builder};
use crate::tensor::Var;

/// Local-global cross-attention transformer.
///
/// `Ns` rounds of block then grid cross-attention update the key/value
/// stream `y` while the query stream `x` stays fixed; a fused MBConv closes
/// the block. Each round has its own parameters. Within a round the grid
/// half reuses the block half's normalized queries.
#[derive(Clone, Debug)]
pub struct LgCat {
    pub rounds: Vec<(PartitionedAttention, PartitionedAttention)>,
    pub mbconv: FusedMbConv,
}

impl LgCat {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let rounds = (0..cfg.ns)
            .map(|i| {
                Ok((
                    PartitionedAttention::new(b, &format!("{prefix}.r{i}.block"), cfg, cfg.window_spec(), true)?,
                    PartitionedAttention::new(b, &format!("{prefix}.r{i}.grid"), cfg, cfg.grid_spec(), false)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rounds,
            mbconv: FusedMbConv::new(b, &format!("{prefix}.mbconv"), cfg.channels())?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x_q: Var<'t>, y_kv: Var<'t>) -> Result<Var<'t>> {
        let mut y = y_kv;
        for (block, grid) in &self.rounds {
            let x1 = block.normalize_query(p, x_q)?;
            y = block.forward_normed(p, x1, y)?;
            y = grid.forward_normed(p, x1, y)?;
        }
        self.mbconv.forward(p, y)
    }

    /// Names of the parameters whose zeroing turns the block into the
    /// identity on `y_kv` (every residual branch's last projection).
    pub fn residual_outputs(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (b, g) in &self.rounds {
            names.push(b.attn.wo.weight.clone());
            names.push(g.attn.wo.weight.clone());
        }
        names.push(self.mbconv.pointwise.kernel.clone());
        names.extend(self.mbconv.pointwise.bias.clone());
        names
    }
}

/// Pair of LG-CAT blocks exchanging information between the depth and
/// semantics streams. The depth-guided block refines semantics using depth
/// queries; the semantics-guided block refines depth using semantic queries.
/// Both read the original inputs.
#[derive(Clone, Debug)]
pub struct SymbioticTransformer {
    pub dgt: LgCat,
    pub sgt: LgCat,
}

impl SymbioticTransformer {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, cfg: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            dgt: LgCat::new(b, &format!("{prefix}.dgt"), cfg)?,
            sgt: LgCat::new(b, &format!("{prefix}.sgt"), cfg)?,
        })
    }

    /// Returns `(F_d, F_s)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, f_d: Var<'t>, f_s: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (ds, ss) = (f_d.shape(), f_s.shape());
        if ds != ss {
            return Err(Error::Shape { op: "symbiotic_transformer", lhs: ds, rhs: ss });
        }
        let s_out = self.dgt.forward(p, f_d, f_s)?;
        let d_out = self.sgt.forward(p, f_s, f_d)?;
        Ok((d_out, s_out))
    }

    pub fn residual_outputs(&self) -> Vec<String> {
        let mut v = self.dgt.residual_outputs();
        v.extend(self.sgt.residual_outputs());
        v
    }
}
