//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] records one node per differentiable operation whose inputs
//! depend on a tracked leaf. Nodes are appended in execution order, so the
//! tape is topologically sorted by construction and [`Tape::backward`] simply
//! walks it in reverse.
//!
//! ```
//! use mpt_core::autodiff::Tape;
//! use mpt_core::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64([3], &[1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod ops;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{MptError, Result};
use crate::tensor::{Element, Tensor};

pub use ops::GatherMap;

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    consumed: Cell<bool>,
    matmul_macs: Cell<u64>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            consumed: Cell::new(false),
            matmul_macs: Cell::new(0),
        }
    }

    /// A tape that never records: every value behaves as a constant and
    /// intermediates are freed as soon as they are dropped.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates executed by `matmul` nodes since creation.
    pub fn matmul_macs(&self) -> u64 {
        self.matmul_macs.get()
    }

    pub(crate) fn count_matmul(&self, macs: u64) {
        self.matmul_macs.set(self.matmul_macs.get() + macs);
    }

    /// A tracked leaf (gradient wanted); untracked on a `no_grad` tape.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        if !self.grad_enabled {
            return self.constant(value);
        }
        let id = self.push(Node {
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: Some(id),
            value: Rc::new(value),
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            id: None,
            value: Rc::new(value),
        }
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        if !self.grad_enabled || ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        let id = self.push(Node {
            inputs: ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            tape: self,
            id: Some(id),
            value: Rc::new(value),
        }
    }

    /// Propagates `∂loss/∂node` to every tracked leaf.
    ///
    /// Calling it twice on the same tape is an error until
    /// [`Tape::reset_backward`] is called.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(MptError::Backward("backward already ran on this tape".into()));
        }
        if loss.value.numel() != 1 {
            return Err(MptError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        self.consumed.set(true);
        let Some(root) = loss.id else {
            return Ok(Gradients::default());
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.value.shape().to_vec()));
        let mut leaves = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                leaves.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            for (slot, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(src), Some(ig)) = (slot, ig) else { continue };
                match &mut grads[*src] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    empty => *empty = Some(ig),
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Allows another backward pass over the already recorded graph.
    pub fn reset_backward(&self) {
        self.consumed.set(false);
    }
}

/// Gradients of the tracked leaves reached by a backward pass.
#[derive(Default)]
pub struct Gradients<T: Element> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.leaves.get(&id))
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    pub fn take(&mut self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        var.id.and_then(|id| self.leaves.remove(&id))
    }
}

/// A value on a tape: a shared tensor plus its node id when tracked.
#[derive(Clone)]
pub struct Var<'t, T: Element = f32> {
    tape: &'t Tape<T>,
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<'t, T: Element> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        Var {
            tape: self.tape,
            id: None,
            value: Rc::clone(&self.value),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(id={:?}, {:?})", self.id, self.value)
    }
}
