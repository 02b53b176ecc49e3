//! NHWC convolution and bilinear upsampling.

use super::tape::Var;
use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output is `ceil(in / stride)`; the odd pixel of
    /// padding, if any, goes to the bottom/right.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    groups: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn out_len(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > input {
                return Err(Error::invalid(format!("conv2d: kernel {k} larger than input {input} with valid padding")));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], stride: usize, padding: Padding, groups: usize) -> Result<Self> {
        let shape_err = || Error::Shape { op: "conv2d", lhs: x.to_vec(), rhs: k.to_vec() };
        let (&[b, h, w, cin], &[kh, kw, kin, cout]) = (x, k) else {
            return Err(shape_err());
        };
        if stride == 0 || groups == 0 {
            return Err(Error::invalid("conv2d: stride and groups must be positive"));
        }
        if cin % groups != 0 {
            return Err(Error::Divisibility { dim: "conv2d input channels", size: cin, by: groups });
        }
        if cout % groups != 0 {
            return Err(Error::Divisibility { dim: "conv2d output channels", size: cout, by: groups });
        }
        if kin != cin / groups {
            return Err(shape_err());
        }
        if padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(Error::invalid(format!("conv2d: 'same' padding needs odd kernel, got {kh}x{kw}")));
        }
        let (oh, pad_top) = out_len(h, kh, stride, padding)?;
        let (ow, pad_left) = out_len(w, kw, stride, padding)?;
        Ok(Self { b, h, w, cin, kh, kw, cout, stride, groups, oh, ow, pad_top, pad_left })
    }

    /// Calls `f(x_offset, k_offset, out_offset)` for every multiply-accumulate.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let cin_g = self.cin / self.groups;
        let cout_g = self.cout / self.groups;
        for b in 0..self.b {
            for oy in 0..self.oh {
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy as usize >= self.h {
                        continue;
                    }
                    for ox in 0..self.ow {
                        let out_base = ((b * self.oh + oy) * self.ow + ox) * self.cout;
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            let x_base = ((b * self.h + iy as usize) * self.w + ix as usize) * self.cin;
                            let k_base = (ky * self.kw + kx) * cin_g * self.cout;
                            for g in 0..self.groups {
                                for ci in 0..cin_g {
                                    let xo = x_base + g * cin_g + ci;
                                    let ko = k_base + ci * self.cout + g * cout_g;
                                    for co in 0..cout_g {
                                        f(xo, ko + co, out_base + g * cout_g + co);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x: [B,H,W,Cin]` with `kernel: [kh,kw,Cin/groups,Cout]`.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, stride: usize, padding: Padding, groups: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), kernel.shape(), stride, padding, groups)?;
    let mut out = vec![0.0; g.b * g.oh * g.ow * g.cout];
    let (xd, kd) = (x.data(), kernel.data());
    g.for_each_tap(|xo, ko, oo| out[oo] += xd[xo] * kd[ko]);
    Ok(Tensor::from_parts(vec![g.b, g.oh, g.ow, g.cout], out))
}

impl<'t> Var<'t> {
    pub fn conv2d(self, kernel: Var<'t>, stride: usize, padding: Padding, groups: usize) -> Result<Var<'t>> {
        let (x, k) = (self.value(), kernel.value());
        let geom = ConvGeom::new(x.shape(), k.shape(), stride, padding, groups)?;
        let out = conv2d_forward(&x, &k, stride, padding, groups)?;
        let back = Box::new(move |g: &Tensor| {
            let mut dx = vec![0.0; x.len()];
            let mut dk = vec![0.0; k.len()];
            let (xd, kd, gd) = (x.data(), k.data(), g.data());
            geom.for_each_tap(|xo, ko, oo| {
                dx[xo] += gd[oo] * kd[ko];
                dk[ko] += gd[oo] * xd[xo];
            });
            vec![
                Tensor::from_parts(x.shape().to_vec(), dx),
                Tensor::from_parts(k.shape().to_vec(), dk),
            ]
        });
        self.tape().push("conv2d", out, &[self, kernel], back)
    }

    /// Bilinear resize by an integer `scale` in {2, 4}, half-pixel centres
    /// (align-corners = false).
    pub fn upsample_bilinear(self, scale: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [b, h, w, c] = x.dims4("upsample_bilinear")?;
        let plan = UpsamplePlan::new(h, w, scale)?;
        let out = plan.forward(x.data(), b, c);
        let back = Box::new(move |g: &Tensor| vec![Tensor::from_parts(vec![b, h, w, c], plan.backward(g.data(), b, c))]);
        self.tape()
            .push("upsample_bilinear", Tensor::from_parts(vec![b, h * scale, w * scale, c], out), &[self], back)
    }
}

/// Source taps `(i0, i1, w0, w1)` for one output coordinate.
type Tap = (usize, usize, f64, f64);

/// Interpolation taps along one axis for align-corners = false resizing.
pub(crate) fn bilinear_taps(input: usize, scale: usize) -> Vec<Tap> {
    (0..input * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l = src - i0 as f64;
            (i0, i1, 1.0 - l, l)
        })
        .collect()
}

struct UpsamplePlan {
    h: usize,
    w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl UpsamplePlan {
    fn new(h: usize, w: usize, scale: usize) -> Result<Self> {
        if scale != 2 && scale != 4 {
            return Err(Error::invalid(format!("upsample_bilinear: unsupported scale {scale}, expected 2 or 4")));
        }
        Ok(Self { h, w, rows: bilinear_taps(h, scale), cols: bilinear_taps(w, scale) })
    }

    fn forward(&self, x: &[f64], b: usize, c: usize) -> Vec<f64> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = vec![0.0; b * oh * ow * c];
        for bi in 0..b {
            for (oy, &(y0, y1, wy0, wy1)) in self.rows.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in self.cols.iter().enumerate() {
                    let o = ((bi * oh + oy) * ow + ox) * c;
                    let at = |y: usize, xx: usize| ((bi * self.h + y) * self.w + xx) * c;
                    let (p00, p01, p10, p11) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
                    for ch in 0..c {
                        out[o + ch] = wy0 * (wx0 * x[p00 + ch] + wx1 * x[p01 + ch])
                            + wy1 * (wx0 * x[p10 + ch] + wx1 * x[p11 + ch]);
                    }
                }
            }
        }
        out
    }

    fn backward(&self, g: &[f64], b: usize, c: usize) -> Vec<f64> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut dx = vec![0.0; b * self.h * self.w * c];
        for bi in 0..b {
            for (oy, &(y0, y1, wy0, wy1)) in self.rows.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in self.cols.iter().enumerate() {
                    let o = ((bi * oh + oy) * ow + ox) * c;
                    let at = |y: usize, xx: usize| ((bi * self.h + y) * self.w + xx) * c;
                    for (p, wgt) in [
                        (at(y0, x0), wy0 * wx0),
                        (at(y0, x1), wy0 * wx1),
                        (at(y1, x0), wy1 * wx0),
                        (at(y1, x1), wy1 * wx1),
                    ] {
                        for ch in 0..c {
                            dx[p + ch] += wgt * g[o + ch];
                        }
                    }
                }
            }
        }
        dx
    }
}
