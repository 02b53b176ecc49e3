use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, Builder};
use crate::tensor::{Tensor, Var};

/// Learnable relative positional bias for one attention layer.
///
/// The table has one row per relative offset `(Δi, Δj)` inside an `h × w`
/// group, i.e. `(2h−1)(2w−1)` rows, and one column per head. The same bias
/// matrix is added to the logits of every group of the layer.
#[derive(Clone, Debug)]
pub struct RelPosBias {
    pub table: String,
    window: (usize, usize),
    heads: usize,
    index: Rc<Vec<usize>>,
}

/// Table row for every `(query, key)` pair of an `h × w` group, flattened
/// row-major over `(q, k)`.
pub fn relative_index(h: usize, w: usize) -> Vec<usize> {
    let l = h * w;
    let mut idx = Vec::with_capacity(l * l);
    for q in 0..l {
        let (qi, qj) = (q / w, q % w);
        for k in 0..l {
            let (ki, kj) = (k / w, k % w);
            let di = qi + h - 1 - ki;
            let dj = qj + w - 1 - kj;
            idx.push(di * (2 * w - 1) + dj);
        }
    }
    idx
}

pub fn table_rows(h: usize, w: usize) -> usize {
    (2 * h - 1) * (2 * w - 1)
}

/// `B[head, q, k] = table[index(q, k), head]` for a `[rows, heads]` table.
pub fn relative_bias_matrix(table: &Tensor, window: (usize, usize)) -> Result<Tensor> {
    let (h, w) = window;
    let rows = table_rows(h, w);
    let [r, heads] = table.shape() else {
        return Err(Error::invalid(format!("bias table must be [rows, heads], got {:?}", table.shape())));
    };
    if *r != rows {
        return Err(Error::invalid(format!("bias table has {r} rows, window {h}x{w} needs {rows}")));
    }
    let l = h * w;
    let index = relative_index(h, w);
    Ok(Tensor::from_fn([*heads, l, l], |i| table.at(&[index[i[1] * l + i[2]], i[0]])))
}

impl RelPosBias {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, window: (usize, usize), heads: usize) -> Result<Self> {
        let (h, w) = window;
        Ok(Self {
            table: b.weight(&format!("{prefix}.rel_bias"), &[table_rows(h, w), heads])?,
            window,
            heads,
            index: Rc::new(relative_index(h, w)),
        })
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    /// Bias as `[heads, L, L]` on the tape.
    pub fn matrix<'t>(&self, p: &Bound<'t>, window: (usize, usize)) -> Result<Var<'t>> {
        if window != self.window {
            return Err(Error::invalid(format!(
                "relative bias built for window {:?}, used with {:?}",
                self.window, window
            )));
        }
        let l = window.0 * window.1;
        p.get(&self.table)?
            .index_select(Rc::clone(&self.index))?
            .reshape([l, l, self.heads])?
            .permute(&[2, 0, 1])
    }
}
