//! Batchwise window and grid partitions and their inverses.
//!
//! Both partitions split a `[B, H, W, C]` map into `B·(H/h)·(W/w)` groups of
//! `h × w` positions. A window groups a contiguous block; a grid groups
//! positions strided by `(H/h, W/w)`, so every group spans the whole image.
//! Each transform is a fixed reshape/transpose sequence and works on plain
//! [`Tensor`]s as well as on tape [`Var`]s.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionKind {
    Window,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub h: usize,
    pub w: usize,
}

impl PartitionSpec {
    pub fn window(h: usize, w: usize) -> Self {
        Self { kind: PartitionKind::Window, h, w }
    }

    pub fn grid(h: usize, w: usize) -> Self {
        Self { kind: PartitionKind::Grid, h, w }
    }

    /// Positions per group.
    pub fn area(&self) -> usize {
        self.h * self.w
    }

    /// Checks `H % h == 0` and `W % w == 0`.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::invalid(format!("partition size must be positive, got {}x{}", self.h, self.w)));
        }
        if height % self.h != 0 {
            return Err(Error::Divisibility { dim: "height", size: height, by: self.h });
        }
        if width % self.w != 0 {
            return Err(Error::Divisibility { dim: "width", size: width, by: self.w });
        }
        Ok(())
    }
}

/// The reshape/permute surface shared by [`Tensor`] and [`Var`].
pub trait Rearrange: Sized {
    fn dims(&self) -> Vec<usize>;
    fn reshaped(&self, shape: &[usize]) -> Result<Self>;
    fn permuted(&self, axes: &[usize]) -> Result<Self>;
}

impl Rearrange for Tensor {
    fn dims(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
    fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.reshape(shape)
    }
    fn permuted(&self, axes: &[usize]) -> Result<Self> {
        self.permute(axes)
    }
}

impl Rearrange for Var<'_> {
    fn dims(&self) -> Vec<usize> {
        self.shape()
    }
    fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.reshape(shape)
    }
    fn permuted(&self, axes: &[usize]) -> Result<Self> {
        self.permute(axes)
    }
}

fn dims4<T: Rearrange>(x: &T) -> Result<[usize; 4]> {
    match x.dims()[..] {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref other => Err(Error::invalid(format!("partition: expected [B,H,W,C], got {other:?}"))),
    }
}

pub fn window_partition<T: Rearrange>(x: &T, h: usize, w: usize) -> Result<T> {
    let [b, hh, ww, c] = dims4(x)?;
    PartitionSpec::window(h, w).validate(hh, ww)?;
    x.reshaped(&[b, hh / h, h, ww / w, w, c])?
        .permuted(&[0, 1, 3, 2, 4, 5])?
        .reshaped(&[b * (hh * ww) / (h * w), h, w, c])
}

pub fn window_reverse<T: Rearrange>(x: &T, h: usize, w: usize, orig: [usize; 4]) -> Result<T> {
    let [b, hh, ww, c] = orig;
    PartitionSpec::window(h, w).validate(hh, ww)?;
    check_count(x, orig)?;
    x.reshaped(&[b, hh / h, ww / w, h, w, c])?
        .permuted(&[0, 1, 3, 2, 4, 5])?
        .reshaped(&[b, hh, ww, c])
}

pub fn grid_partition<T: Rearrange>(x: &T, h: usize, w: usize) -> Result<T> {
    let [b, hh, ww, c] = dims4(x)?;
    PartitionSpec::grid(h, w).validate(hh, ww)?;
    let n = (hh * ww) / (h * w);
    x.reshaped(&[b, h, hh / h, w, ww / w, c])?
        .permuted(&[0, 1, 3, 2, 4, 5])?
        .reshaped(&[b, h * w, n, c])?
        .permuted(&[0, 2, 1, 3])?
        .reshaped(&[b * n, h, w, c])
}

pub fn grid_reverse<T: Rearrange>(x: &T, h: usize, w: usize, orig: [usize; 4]) -> Result<T> {
    let [b, hh, ww, c] = orig;
    PartitionSpec::grid(h, w).validate(hh, ww)?;
    check_count(x, orig)?;
    let n = (hh * ww) / (h * w);
    x.reshaped(&[b, n, h * w, c])?
        .permuted(&[0, 2, 1, 3])?
        .reshaped(&[b, h, w, hh / h, ww / w, c])?
        .permuted(&[0, 1, 3, 2, 4, 5])?
        .reshaped(&[b, hh, ww, c])
}

fn check_count<T: Rearrange>(x: &T, orig: [usize; 4]) -> Result<()> {
    let have: usize = x.dims().iter().product();
    let want: usize = orig.iter().product();
    if have != want {
        return Err(Error::Shape { op: "partition reverse", lhs: x.dims(), rhs: orig.to_vec() });
    }
    Ok(())
}

/// Dispatches on `spec.kind`.
pub fn partition<T: Rearrange>(x: &T, spec: PartitionSpec) -> Result<T> {
    match spec.kind {
        PartitionKind::Window => window_partition(x, spec.h, spec.w),
        PartitionKind::Grid => grid_partition(x, spec.h, spec.w),
    }
}

pub fn reverse<T: Rearrange>(x: &T, spec: PartitionSpec, orig: [usize; 4]) -> Result<T> {
    match spec.kind {
        PartitionKind::Window => window_reverse(x, spec.h, spec.w, orig),
        PartitionKind::Grid => grid_reverse(x, spec.h, spec.w, orig),
    }
}
