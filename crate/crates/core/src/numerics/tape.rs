//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes the gradient contribution for each parent given the output
/// gradient. `needs[i]` tells whether parent `i` participates in differentiation;
/// entries for non-participating parents may be `None`.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

pub struct BackwardCtx<'a> {
    nodes: &'a [Node],
    parents: &'a [usize],
    pub out: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: &'a [bool],
}

impl BackwardCtx<'_> {
    /// Value of the `i`-th parent.
    pub fn input(&self, i: usize) -> &Tensor {
        &self.nodes[self.parents[i]].value
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// A non-differentiable input (data, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record the application of a primitive. The backward closure is dropped
    /// when no parent requires a gradient.
    pub fn push_op(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let parents: Vec<usize> = parents.iter().map(|p| p.0).collect();
        let backward = requires_grad.then_some(backward);
        self.push_node(value, parents, backward, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of a scalar output with respect to every recorded node.
    pub fn backward(&self, output: Var) -> Gradients {
        let out = &self.nodes[output.0].value;
        assert_eq!(out.len(), 1, "backward() needs a scalar output, got {:?}", out.shape());
        self.backward_with(output, Tensor::full(out.shape(), 1.0))
    }

    /// Vector-Jacobian product with an explicit seed gradient.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.nodes[output.0].value.shape());
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            // Interior gradients are released once propagated; leaves keep theirs.
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let ctx = BackwardCtx {
                nodes: &self.nodes,
                parents: &node.parents,
                out: &node.value,
                grad: &g,
                needs: &needs,
            };
            let contributions = backward(&ctx);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for ((&p, c), &need) in node.parents.iter().zip(contributions).zip(&needs) {
                let Some(c) = c else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(c.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf. Leaves that did not participate get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, zero-filled when the leaf did not participate.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
