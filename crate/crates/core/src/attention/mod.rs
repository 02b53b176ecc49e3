//! Cross-attention with relative positional bias, block/grid wrappers,
//! fused MBConv and the local-global cross-attention transformer.

mod cross;
mod lgcat;
mod mbconv;
mod relbias;

pub use cross::{AttentionTrace, CrossAttention, PartitionedAttention};
pub use lgcat::{LgCat, SymbioticTransformer};
pub use mbconv::{FusedMbConv, SE_RATIO};
pub use relbias::{relative_bias_matrix, relative_index, table_rows, RelPosBias};

use crate::error::{Error, Result};
use crate::partition::PartitionSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub window: (usize, usize),
    pub grid: (usize, usize),
    /// Block/grid rounds per LG-CAT.
    pub ns: usize,
}

impl Default for AttentionConfig {
    /// Full-scale settings: 4 heads of 32 channels, 7×7 windows and grids,
    /// two rounds.
    fn default() -> Self {
        Self { heads: 4, head_dim: 32, window: (7, 7), grid: (7, 7), ns: 2 }
    }
}

impl AttentionConfig {
    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn window_spec(&self) -> PartitionSpec {
        PartitionSpec::window(self.window.0, self.window.1)
    }

    pub fn grid_spec(&self) -> PartitionSpec {
        PartitionSpec::grid(self.grid.0, self.grid.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.ns == 0 {
            return Err(Error::invalid(format!("attention config needs heads, head_dim, ns >= 1: {self:?}")));
        }
        if self.window.0 == 0 || self.window.1 == 0 || self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::invalid(format!("attention window and grid must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Checks that an `h × w` feature map splits into whole windows and grid cells.
    pub fn validate_resolution(&self, h: usize, w: usize) -> Result<()> {
        self.window_spec().validate(h, w)?;
        self.grid_spec().validate(h, w)
    }

    /// Same heads and rounds with channels `c` and window/grid clipped to an
    /// `h × w` map. Used by encoder stages whose resolution may fall below
    /// the configured window.
    pub fn adapted(&self, c: usize, h: usize, w: usize) -> Result<Self> {
        if c % self.heads != 0 {
            return Err(Error::Divisibility { dim: "stage channels", size: c, by: self.heads });
        }
        let cfg = Self {
            head_dim: c / self.heads,
            window: (self.window.0.min(h), self.window.1.min(w)),
            grid: (self.grid.0.min(h), self.grid.1.min(w)),
            ..*self
        };
        cfg.validate_resolution(h, w)?;
        Ok(cfg)
    }
}
