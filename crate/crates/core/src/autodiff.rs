//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every differentiable operation applied to [`Var`]s
//! that require gradients. Nodes are appended in execution order, so the
//! record is already topologically sorted and [`Graph::backward`] walks it
//! once in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Vector-Jacobian product of one recorded operation.
///
/// `needs[i]` tells whether input `i` wants a gradient; implementations may
/// return `None` for inputs that do not.
pub(crate) trait Backward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<Box<dyn Backward>>,
}

/// Handle to a value flowing through a [`Graph`].
///
/// Cloning is cheap; the tensor is shared.
#[derive(Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node)
            .finish()
    }
}

impl Var {
    /// A value that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Var {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn shared(&self) -> Rc<Tensor> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_tensor(self) -> Tensor {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

/// Operation record for one forward pass.
///
/// A graph is confined to a single thread. Build a fresh one per step.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// A graph that records nothing; every result is a constant and
    /// intermediates are freed as soon as they go out of scope.
    pub fn inference() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that requires gradients (a constant when not recording).
    pub fn leaf(&self, value: Tensor) -> Var {
        if !self.enabled {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var::constant(value)
    }

    /// Appends an operation result. `make` builds the backward closure only
    /// when at least one input participates in differentiation.
    pub(crate) fn record<B, F>(
        &self,
        op: &'static str,
        inputs: &[&Var],
        value: Tensor,
        make: F,
    ) -> Result<Var>
    where
        B: Backward + 'static,
        F: FnOnce() -> B,
    {
        if !value.is_finite() {
            return Err(Error::NonFinite(op));
        }
        let tracked = self.enabled && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Ok(Var::constant(value));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: inputs.iter().map(|v| v.node).collect(),
            backward: Some(Box::new(make())),
        });
        Ok(Var {
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        })
    }

    /// Reverse sweep from a scalar. Returns gradients of all reachable leaves.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::full(loss.shape(), 1.0));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward.backward(&grad, &needs)?;
            for (input, g) in node.inputs.iter().zip(input_grads) {
                if let (Some(input), Some(g)) = (input, g) {
                    match &mut grads[*input] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.node.and_then(|id| self.grads.get(id)?.as_ref())
    }

    pub(crate) fn take(&mut self, var: &Var) -> Option<Tensor> {
        var.node.and_then(|id| self.grads.get_mut(id)?.take())
    }
}
