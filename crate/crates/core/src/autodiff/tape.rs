//! Computation tape: records every operation in creation order and
//! replays it backwards to accumulate gradients.

use crate::autodiff::kernels::Window;
use crate::autodiff::{conv, dense, loss, norm, pointwise};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind plus whatever the backward rule needs from the forward pass.
#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        window: Window,
        batch: usize,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        window: Window,
        batch: usize,
        input_cm: Vec<T>,
    },
    BatchNorm2d {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Relu {
        input: Var,
    },
    Tanh {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    AvgPool2d {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    AbsDiff {
        lhs: Var,
        rhs: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
    Bce {
        probs: Var,
        targets: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm2d { .. } => "batch_norm2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Linear { .. } => "fully_connected",
            Op::Reshape { .. } => "reshape",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::AbsDiff { .. } => "abs_diff",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Bce { .. } => "bce",
            Op::Mse { .. } => "mse",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes only ever reference earlier nodes, so creation order is a
/// topological order and the backward sweep is a single reverse scan.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node; outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Drops nodes recorded after `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Records a leaf; it takes part in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a copy of `tensor` as a leaf, trainable or frozen.
    pub fn param(&mut self, tensor: &Tensor<T>, trainable: bool) -> Var {
        self.leaf(tensor.detached().with_requires_grad(trainable))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Handles of every recorded node in creation order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.nodes.len()).map(Var)
    }

    /// Kind of operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Copies the value of `v` into a fresh non-differentiable leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).detached();
        self.constant(t)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = value.with_requires_grad(needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every node that requires a gradient and is an ancestor of `loss`
    /// gets its gradient added to its buffer; calling this twice without
    /// [`Tape::reset`] or [`Tape::zero_grads`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Contract(
                "backward on a value that does not depend on any differentiable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads)?;
            self.nodes[idx].value.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Clears every gradient buffer on the tape.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let mut sink = GradSink {
            tape: self,
            grads,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                batch,
                cols,
            } => conv::conv2d_backward(&mut sink, g, *input, *weight, *bias, window, *batch, cols),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
                batch,
                input_cm,
            } => conv::conv_transpose2d_backward(
                &mut sink, g, *input, *weight, *bias, window, *batch, input_cm,
            ),
            Op::BatchNorm2d {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => norm::batch_norm2d_backward(
                &mut sink,
                g,
                *input,
                *gamma,
                *beta,
                xhat,
                inv_std,
                *batch_stats,
            ),
            Op::LeakyRelu { input, slope } => pointwise::leaky_relu_backward(&mut sink, g, *input, *slope),
            Op::Relu { input } => pointwise::relu_backward(&mut sink, g, *input),
            Op::Tanh { input } => pointwise::tanh_backward(&mut sink, g, *input, &node.value),
            Op::Sigmoid { input } => pointwise::sigmoid_backward(&mut sink, g, *input, &node.value),
            Op::Linear {
                input,
                weight,
                bias,
            } => dense::linear_backward(&mut sink, g, *input, *weight, *bias),
            Op::Reshape { input } => sink.add(*input, g.to_vec()),
            Op::AvgPool2d {
                input,
                kernel,
                stride,
            } => pointwise::avg_pool2d_backward(&mut sink, g, *input, *kernel, *stride, &node.value),
            Op::AbsDiff { lhs, rhs } => pointwise::abs_diff_backward(&mut sink, g, *lhs, *rhs),
            Op::Add { lhs, rhs } => {
                sink.add(*lhs, g.to_vec());
                sink.add(*rhs, g.to_vec());
            }
            Op::Mul { lhs, rhs } => pointwise::mul_backward(&mut sink, g, *lhs, *rhs),
            Op::Scale { input, factor } => sink.add(*input, g.iter().map(|&v| v * *factor).collect()),
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                sink.add(*input, vec![g[0]; n]);
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                let v = g[0] / T::from_usize(n).unwrap();
                sink.add(*input, vec![v; n]);
            }
            Op::BceWithLogits { logits, targets } => loss::bce_with_logits_backward(&mut sink, g[0], *logits, targets),
            Op::Bce { probs, targets } => loss::bce_backward(&mut sink, g[0], *probs, targets),
            Op::Mse { pred, target } => loss::mse_backward(&mut sink, g[0], *pred, *target),
        }
        Ok(())
    }
}

/// Collects gradient contributions for the inputs of one node.
pub(crate) struct GradSink<'a, T> {
    tape: &'a Tape<T>,
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> GradSink<'_, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.tape.nodes[v.0].needs_grad
    }

    pub(crate) fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub(crate) fn add(&mut self, v: Var, g: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap().with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap().with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap().with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, -8.0]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[3]).with_requires_grad(true));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[2]).with_requires_grad(true));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn reset_returns_node_count_to_baseline() {
        let mut tape = Tape::<f32>::new();
        let baseline = tape.len();
        for _ in 0..3 {
            let x = tape.leaf(Tensor::ones(&[4]).with_requires_grad(true));
            let y = tape.tanh(x);
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            assert!(tape.len() > baseline);
            tape.reset();
            assert_eq!(tape.len(), baseline);
        }
    }
}
