//! Reverse-mode differentiation over a linear tape.
//!
//! Every differentiable op appends one node holding its output value, the ids
//! of its inputs and a closure mapping the output gradient to one gradient per
//! input. Node ids are assigned in creation order, so the node list is already
//! topologically sorted and the backward pass is a single reverse sweep.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::value::Tensor;
use crate::error::{Error, Result};

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: if requires_grad { "leaf" } else { "const" },
            value: Rc::new(value),
            parents: Vec::new(),
            // Leaves keep an empty rule so `requires_grad` can be read off the node.
            backward: requires_grad.then(|| Box::new(|_: &Tensor| Vec::new()) as BackwardFn),
        });
        Var { tape: self, id }
    }

    /// Appends an op output. The backward rule is dropped when no input needs
    /// a gradient.
    pub(crate) fn push<'t>(
        &'t self,
        op: &'static str,
        value: Tensor,
        parents: &[Var<'t>],
        backward: BackwardFn,
    ) -> Result<Var<'t>> {
        value.check_finite(op)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires = parents.iter().any(|p| nodes[p.id].backward.is_some());
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires.then_some(backward),
        });
        Ok(Var { tape: self, id })
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Propagates d(output)/d(node) for every node that requires a gradient.
    /// `output` must hold a single element.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::full(out.value.shape().to_vec(), 1.0));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let (Some(rule), Some(g)) = (&node.backward, &grads[id]) else {
                continue;
            };
            if node.parents.is_empty() {
                continue;
            }
            let parent_grads = rule(g);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                if nodes[pid].backward.is_none() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape(), "{} -> {}", node.op, nodes[pid].op);
                match &mut grads[pid] {
                    Some(acc) => acc.data_mut().iter_mut().zip(pg.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not influence the output or
    /// is a constant.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when absent.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].backward.is_some()
    }
}
