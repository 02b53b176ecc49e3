use rand::Rng;

use super::relbias::RelPosBias;
use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::{Bound, Builder};
use crate::partition::{self, PartitionSpec};
use crate::tensor::Var;

/// Multi-head cross-attention over groups of `L` positions:
/// `softmax(Q_x K_yᵀ / √d + B) V_y`, heads concatenated, then `W_O`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub bias: RelPosBias,
    heads: usize,
    head_dim: usize,
}

/// Intermediate tensors of one attention call, exposed for inspection.
pub struct AttentionTrace<'t> {
    /// `[N, heads, L, L]`, rows are probability vectors.
    pub weights: Var<'t>,
    /// Concatenated head outputs before `W_O`, `[N, L, C]`.
    pub mixed: Var<'t>,
    pub output: Var<'t>,
}

impl CrossAttention {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, cfg: &AttentionConfig, group: (usize, usize)) -> Result<Self> {
        let c = cfg.channels();
        Ok(Self {
            wq: Linear::new(b, &format!("{prefix}.wq"), c, c, false)?,
            wk: Linear::new(b, &format!("{prefix}.wk"), c, c, false)?,
            wv: Linear::new(b, &format!("{prefix}.wv"), c, c, false)?,
            wo: Linear::new(b, &format!("{prefix}.wo"), c, c, false)?,
            bias: RelPosBias::new(b, prefix, group, cfg.heads)?,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, q_feats: Var<'t>, kv_feats: Var<'t>) -> Result<Var<'t>> {
        Ok(self.trace(p, q_feats, kv_feats)?.output)
    }

    pub fn trace<'t>(&self, p: &Bound<'t>, q_feats: Var<'t>, kv_feats: Var<'t>) -> Result<AttentionTrace<'t>> {
        let (qs, ks) = (q_feats.shape(), kv_feats.shape());
        let c = self.heads * self.head_dim;
        let (n, l) = match (&qs[..], &ks[..]) {
            ([n, l, cq], [n2, l2, ck]) if n == n2 && l == l2 && *cq == c && *ck == c => (*n, *l),
            _ => return Err(Error::Shape { op: "cross_attention", lhs: qs, rhs: ks }),
        };
        let (gh, gw) = self.bias.window();
        if l != gh * gw {
            return Err(Error::invalid(format!("cross_attention: {l} positions, bias expects {gh}x{gw}")));
        }
        let split = |v: Var<'t>| v.reshape([n, l, self.heads, self.head_dim])?.permute(&[0, 2, 1, 3]);
        let q = split(self.wq.forward(p, q_feats)?)?;
        let k = split(self.wk.forward(p, kv_feats)?)?;
        let v = split(self.wv.forward(p, kv_feats)?)?;

        let bias = self.bias.matrix(p, (gh, gw))?.reshape([1, self.heads, l, l])?;
        let logits = q
            .matmul(k.transpose_last()?)?
            .scale(1.0 / (self.head_dim as f64).sqrt())?
            .add(bias)?;
        let weights = logits.softmax(-1)?;
        let mixed = weights.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape([n, l, c])?;
        let output = self.wo.forward(p, mixed)?;
        Ok(AttentionTrace { weights, mixed, output })
    }
}

/// Block (window) or grid cross-attention with pre-norm and residual:
/// `y + reverse(CA(partition(LN_q(x)), partition(LN_kv(y))))`.
#[derive(Clone, Debug)]
pub struct PartitionedAttention {
    pub spec: PartitionSpec,
    pub norm_q: Option<LayerNorm>,
    pub norm_kv: LayerNorm,
    pub attn: CrossAttention,
}

impl PartitionedAttention {
    /// `own_query_norm = false` builds a layer that expects already
    /// normalized queries (see [`forward_normed`](Self::forward_normed)).
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        prefix: &str,
        cfg: &AttentionConfig,
        spec: PartitionSpec,
        own_query_norm: bool,
    ) -> Result<Self> {
        let c = cfg.channels();
        Ok(Self {
            spec,
            norm_q: if own_query_norm { Some(LayerNorm::new(b, &format!("{prefix}.norm_q"), c)?) } else { None },
            norm_kv: LayerNorm::new(b, &format!("{prefix}.norm_kv"), c)?,
            attn: CrossAttention::new(b, &format!("{prefix}.attn"), cfg, (spec.h, spec.w))?,
        })
    }

    pub fn normalize_query<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        match &self.norm_q {
            Some(n) => n.forward(p, x),
            None => Err(Error::invalid("layer has no query norm; pass normalized queries to forward_normed")),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x_q: Var<'t>, y_kv: Var<'t>) -> Result<Var<'t>> {
        let x1 = self.normalize_query(p, x_q)?;
        self.forward_normed(p, x1, y_kv)
    }

    pub fn forward_normed<'t>(&self, p: &Bound<'t>, x1: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let (xs, ys) = (x1.shape(), y.shape());
        if xs != ys {
            return Err(Error::Shape { op: "partitioned cross-attention", lhs: xs, rhs: ys });
        }
        let [b, h, w, c] = match ys[..] {
            [b, h, w, c] => [b, h, w, c],
            _ => return Err(Error::invalid(format!("expected [B,H,W,C], got {ys:?}"))),
        };
        self.spec.validate(h, w)?;
        let y1 = self.norm_kv.forward(p, y)?;
        let l = self.spec.area();
        let groups = |v: Var<'t>| -> Result<Var<'t>> {
            let part = partition::partition(&v, self.spec)?;
            let n = part.shape()[0];
            part.reshape([n, l, c])
        };
        let attended = self.attn.forward(p, groups(x1)?, groups(y1)?)?;
        let n = attended.shape()[0];
        let back = partition::reverse(&attended.reshape([n, self.spec.h, self.spec.w, c])?, self.spec, [b, h, w, c])?;
        y.add(back)
    }
}
