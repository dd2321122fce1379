use std::cell::RefCell;
use std::sync::Arc;

use crate::tensor::Tensor;

/// What a backward rule sees: the upstream gradient, the forward inputs and
/// output, and which inputs actually need a gradient.
pub struct BackwardArgs<'a> {
    pub grad: &'a Tensor,
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    pub needs: &'a [bool],
}

/// Returns one optional gradient per input, in input order. `None` means zero.
pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records executed operations for one forward pass.
///
/// A tape is single-threaded; run independent forward passes on independent
/// tapes. Operators may still parallelize their inner loops.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
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

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.shared(Arc::new(value), true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.shared(Arc::new(value), false)
    }

    pub fn shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records an operation. The backward rule is dropped when no input
    /// requires a gradient, which makes the result a constant.
    pub fn op<'a>(&'a self, inputs: &[Var<'a>], output: Tensor, backward: BackwardFn) -> Var<'a> {
        for v in inputs {
            assert!(
                std::ptr::eq(v.tape, self),
                "operation mixes variables from different tapes"
            );
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        self.push(Node {
            value: Arc::new(output),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    /// Reverse-mode sweep from a scalar output.
    ///
    /// Panics when `output` holds more than one element.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        assert_eq!(
            out.value.len(),
            1,
            "backward needs a scalar output, got shape {:?}",
            out.value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(out.value.shape(), 1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                assert_eq!(
                    g.shape(),
                    nodes[p].value.shape(),
                    "backward rule produced a gradient of the wrong shape"
                );
                match &mut grads[p] {
                    Some(acc) => acc.axpy(1.0, &g),
                    slot => *slot = Some(g),
                }
            }
        }

        // Leaves that require a gradient but were not reached get zeros.
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_none() && node.requires_grad && node.parents.is_empty() {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape()));
                }
            } else if node.backward.is_some() {
                grads[id] = None;
            }
        }
        Gradients { grads }
    }
}

/// Gradients of leaf variables after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = ops::mul(x, x);
        let g = tape.backward(y);
        assert!((g.get(x).unwrap().item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_branch_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = ops::add(ops::mul(x, x), ops::mul(c, c));
        assert!(!ops::mul(c, c).requires_grad());
        let g = tape.backward(y);
        assert!((g.get(x).unwrap().item() - 4.0).abs() < 1e-12);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::zeros(&[2, 3]));
        let y = ops::mul(x, x);
        let g = tape.backward(y);
        let gu = g.get(unused).unwrap();
        assert_eq!(gu.shape(), &[2, 3]);
        assert_eq!(gu.sum(), 0.0);
    }

    #[test]
    fn reused_value_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = ops::add(ops::add(x, x), x);
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 3.0);
    }

    #[test]
    #[should_panic(expected = "scalar output")]
    fn non_scalar_output_is_fatal() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        let _ = tape.backward(x);
    }
}
