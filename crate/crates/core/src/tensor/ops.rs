use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use statrs::function::erf::erf;

use super::tape::{BackwardFn, Var};
use super::value::{
    axis_split, broadcast_binary, inverse_permutation, matmul_backward, matmul_forward, numel,
    resolve_axis, softmax_forward, sum_to_shape, Tensor,
};
use crate::error::{Error, Result};

/// Elementwise nonlinearities with exact derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `x·Φ(x)` with the erf-based normal CDF.
    Gelu,
    Sigmoid,
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn boxed(f: impl Fn(&Tensor) -> Vec<Tensor> + 'static) -> BackwardFn {
    Box::new(f)
}

impl<'t> Var<'t> {
    fn binary(
        self,
        rhs: Var<'t>,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // (grad_out, a, b) -> (da, db) at full broadcast shape
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        let out = broadcast_binary(op, &a, &b, f)?;
        let out_shape = out.shape().to_vec();
        let back = boxed(move |g| {
            let ea = broadcast_binary(op, &a, &Tensor::zeros(out_shape.clone()), |x, _| x).unwrap();
            let eb = broadcast_binary(op, &b, &Tensor::zeros(out_shape.clone()), |x, _| x).unwrap();
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                let (x, y) = df(g.data()[i], ea.data()[i], eb.data()[i]);
                ga[i] = x;
                gb[i] = y;
            }
            let ga = Tensor::from_parts(out_shape.clone(), ga);
            let gb = Tensor::from_parts(out_shape.clone(), gb);
            vec![sum_to_shape(&ga, a.shape()), sum_to_shape(&gb, b.shape())]
        });
        self.tape().push(op, out, &[self, rhs], back)
    }

    /// Broadcasting elementwise sum.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "div", |a, b| a / b, |g, a, b| (g / b, -g * a / (b * b)))
    }

    fn unary(self, op: &'static str, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Result<Var<'t>> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let yb = Rc::clone(&y);
        let back = boxed(move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(yb.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Tensor::from_parts(g.shape().to_vec(), data)]
        });
        let out = Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone());
        self.tape().push(op, out, &[self], back)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    /// `max(x, lo)`; the gradient is passed only where `x > lo`.
    pub fn clamp_min(self, lo: f64) -> Result<Var<'t>> {
        self.unary("clamp_min", move |x| x.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }

    pub fn activation(self, kind: Activation) -> Result<Var<'t>> {
        match kind {
            Activation::Gelu => self.unary("gelu", gelu, |x, _| gelu_grad(x)),
            Activation::Sigmoid => self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y)),
        }
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.activation(Activation::Gelu)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.activation(Activation::Sigmoid)
    }

    /// Elementwise op with a caller-supplied derivative. Intended for
    /// verification harnesses; a wrong `df` is caught by gradient checking.
    pub fn map_with_grad(
        self,
        op: &'static str,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
    ) -> Result<Var<'t>> {
        self.unary(op, f, move |x, _| df(x))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        let out = matmul_forward(&a, &b)?;
        let back = boxed(move |g| {
            let (da, db) = matmul_backward(&a, &b, g);
            vec![da, db]
        });
        self.tape().push("matmul", out, &[self, rhs], back)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        let back = boxed(move |g| vec![g.reshape(in_shape.clone()).expect("same numel")]);
        self.tape().push("reshape", out, &[self], back)
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let out = self.value().permute(axes)?;
        let inv = inverse_permutation(axes);
        let back = boxed(move |g| vec![g.permute(&inv).expect("valid inverse")]);
        self.tape().push("permute", out, &[self], back)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Result<Var<'t>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::Axis { op: "transpose_last", axis: -2, rank: r });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn softmax(self, axis: isize) -> Result<Var<'t>> {
        let x = self.value();
        let axis = resolve_axis("softmax", axis, x.rank())?;
        let y = Rc::new(softmax_forward(&x, axis));
        let yb = Rc::clone(&y);
        let back = boxed(move |g| {
            let (outer, len, inner) = axis_split(yb.shape(), axis);
            let (yd, gd) = (yb.data(), g.data());
            let mut dx = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len).map(|j| yd[base + j * inner] * gd[base + j * inner]).sum();
                    for j in 0..len {
                        let p = base + j * inner;
                        dx[p] = yd[p] * (gd[p] - dot);
                    }
                }
            }
            vec![Tensor::from_parts(yb.shape().to_vec(), dx)]
        });
        self.tape().push("softmax", (*y).clone(), &[self], back)
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` (each of
    /// last-axis length).
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let c = *x.shape().last().expect("rank >= 1");
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let rows = x.len() / c;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = x.shape().to_vec();
        let back = boxed(move |g| {
            let gd = g.data();
            let mut dx = vec![0.0; gd.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for r in 0..rows {
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for j in 0..c {
                    let p = r * c + j;
                    let dh = gd[p] * gv.data()[j];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[p];
                    dgamma[j] += gd[p] * xhat[p];
                    dbeta[j] += gd[p];
                }
                mean_dh /= c as f64;
                mean_dh_h /= c as f64;
                for j in 0..c {
                    let p = r * c + j;
                    let dh = gd[p] * gv.data()[j];
                    dx[p] = inv_std[r] * (dh - mean_dh - xhat[p] * mean_dh_h);
                }
            }
            vec![
                Tensor::from_parts(shape.clone(), dx),
                Tensor::from_parts(vec![c], dgamma),
                Tensor::from_parts(vec![c], dbeta),
            ]
        });
        self.tape().push("layer_norm", Tensor::from_parts(x.shape().to_vec(), out), &[self, gamma, beta], back)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let back = boxed(move |g| vec![Tensor::full(shape.clone(), g.item())]);
        self.tape().push("sum", Tensor::scalar(x.sum()), &[self], back)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Mean over `axes`, keeping them as size-1 dims.
    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.rank();
        if let Some(&bad) = axes.iter().find(|&&a| a >= rank) {
            return Err(Error::Axis { op: "mean_axes", axis: bad as isize, rank });
        }
        let mut out_shape = x.shape().to_vec();
        for &a in axes {
            out_shape[a] = 1;
        }
        let count = (numel(x.shape()) / numel(&out_shape)) as f64;
        let summed = sum_to_shape(&x, &out_shape);
        let out = summed.map(|v| v / count);
        let in_shape = x.shape().to_vec();
        let back = boxed(move |g| {
            let scaled = g.map(|v| v / count);
            vec![broadcast_binary("mean_axes", &scaled, &Tensor::zeros(in_shape.clone()), |a, _| a).unwrap()]
        });
        self.tape().push("mean_axes", out, &[self], back)
    }

    /// Concatenates along the last axis; all other dims must agree.
    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let lead = &values[0].shape()[..values[0].rank() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            if v.rank() != values[0].rank() || &v.shape()[..v.rank() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat_last",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(*v.shape().last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let lead = lead.to_vec();
        let back = boxed(move |g| {
            let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (o, &w) in outs.iter_mut().zip(&widths) {
                    o.extend_from_slice(&g.data()[off..off + w]);
                    off += w;
                }
            }
            outs.into_iter()
                .zip(&widths)
                .map(|(d, &w)| {
                    let mut s = lead.clone();
                    s.push(w);
                    Tensor::from_parts(s, d)
                })
                .collect()
        });
        first.tape().push("concat_last", Tensor::from_parts(shape, data), parts, back)
    }

    /// Gathers rows along axis 0: `out[i, ...] = x[index[i], ...]`.
    pub fn index_select(self, index: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        let rows = x.shape()[0];
        let row_len = x.len() / rows;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("index_select: index {bad} out of range for {rows} rows")));
        }
        let mut data = Vec::with_capacity(index.len() * row_len);
        for &i in index.iter() {
            data.extend_from_slice(&x.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = index.len();
        let in_shape = x.shape().to_vec();
        let back = boxed(move |g| {
            let mut dx = vec![0.0; numel(&in_shape)];
            for (k, &i) in index.iter().enumerate() {
                for j in 0..row_len {
                    dx[i * row_len + j] += g.data()[k * row_len + j];
                }
            }
            vec![Tensor::from_parts(in_shape.clone(), dx)]
        });
        self.tape().push("index_select", Tensor::from_parts(shape, data), &[self], back)
    }

    /// Reverses the order of one axis.
    pub fn flip(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::Axis { op: "flip", axis: axis as isize, rank: x.rank() });
        }
        let out = flip_axis(&x, axis);
        let back = boxed(move |g| vec![flip_axis(g, axis)]);
        self.tape().push("flip", out, &[self], back)
    }
}

pub(crate) fn flip_axis(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut data = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..len {
            let src = (o * len + j) * inner;
            let dst = (o * len + (len - 1 - j)) * inner;
            data[dst..dst + inner].copy_from_slice(&x.data()[src..src + inner]);
        }
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}
