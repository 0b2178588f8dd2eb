//! Reverse-mode bookkeeping for a sequential layer stack.
//!
//! A forward pass in train mode records one [`OpNode`] per layer on a
//! [`Tape`]. Consuming the tape with one of the `backward*` methods walks
//! the nodes in exact reverse order and adds each parameter's gradient into
//! its tensor's grad buffer. Gradients accumulate across tapes until
//! [`crate::model::Network::zero_grad`] is called; a tape itself can only be
//! consumed once.

use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Conv2d { stride: usize, padding: usize },
    MaxPool2d,
    Dense,
    Relu,
    Sigmoid,
    Dropout,
    Flatten,
}

#[derive(Debug, Clone)]
pub(crate) enum Saved<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Argmax { input_len: usize, argmax: Vec<usize> },
    Mask(Option<Vec<T>>),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct OpNode<T> {
    kind: OpKind,
    /// Indices of the parameter tensors this op reads (weight, bias).
    params: Vec<usize>,
    saved: Saved<T>,
}

impl<T> OpNode<T> {
    pub fn kind(&self) -> OpKind {
        self.kind
    }
}

#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<OpNode<T>>,
    output: Tensor<T>,
}

impl<T: Scalar> Tape<T> {
    pub(crate) fn new() -> Self {
        Self {
            nodes: Vec::new(),
            output: Tensor::scalar(T::zero()),
        }
    }

    pub(crate) fn record(&mut self, kind: OpKind, params: Vec<usize>, saved: Saved<T>) {
        self.nodes.push(OpNode { kind, params, saved });
    }

    pub(crate) fn finish(&mut self, output: Tensor<T>) {
        self.output = output;
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn nodes(&self) -> &[OpNode<T>] {
        &self.nodes
    }

    /// Treats the recorded output as the loss and back-propagates `d loss / d loss = 1`.
    pub fn backward(self, params: &mut [Tensor<T>]) -> Result<Vec<T>, TensorError> {
        if self.output.len() != 1 {
            return Err(TensorError::NonScalarOutput(self.output.shape().to_vec()));
        }
        self.backward_from(params, vec![T::one()])
    }

    /// Back-propagates binary cross-entropy against `label`, scaled by `scale`.
    ///
    /// When the last op is a sigmoid the two gradients are fused into
    /// `(p - y) * scale` at the logit, which stays exact where `p` saturates.
    pub fn backward_bce(mut self, params: &mut [Tensor<T>], label: T, scale: T) -> Result<Vec<T>, TensorError> {
        if self.output.len() != 1 {
            return Err(TensorError::NonScalarOutput(self.output.shape().to_vec()));
        }
        let p = self.output.data()[0];
        if matches!(self.nodes.last(), Some(n) if n.kind == OpKind::Sigmoid) {
            self.nodes.pop();
            return self.backward_from(params, vec![(p - label) * scale]);
        }
        let eps = T::of(crate::train::BCE_EPSILON);
        let pc = p.max(eps).min(T::one() - eps);
        let dp = (-(label / pc) + (T::one() - label) / (T::one() - pc)) * scale;
        self.backward_from(params, vec![dp])
    }

    /// Back-propagates an arbitrary upstream gradient of the output.
    /// Returns the gradient with respect to the network input.
    pub fn backward_from(self, params: &mut [Tensor<T>], grad_output: Vec<T>) -> Result<Vec<T>, TensorError> {
        let mut grad = grad_output;
        for node in self.nodes.into_iter().rev() {
            grad = match (node.kind, node.saved) {
                (OpKind::Conv2d { stride, padding }, Saved::Input(input)) => {
                    let (w, b) = (node.params[0], node.params[1]);
                    let g = ops::conv2d_backward(&input, &params[w], &params[b], stride, padding, &grad)?;
                    params[w].accumulate_grad(&g.kernels);
                    params[b].accumulate_grad(&g.bias);
                    g.input
                }
                (OpKind::Dense, Saved::Input(input)) => {
                    let (w, b) = (node.params[0], node.params[1]);
                    let g = ops::dense_backward(&input, &params[w], &params[b], &grad)?;
                    params[w].accumulate_grad(&g.weights);
                    params[b].accumulate_grad(&g.bias);
                    g.input
                }
                (OpKind::MaxPool2d, Saved::Argmax { input_len, argmax }) => {
                    ops::maxpool2d_backward(input_len, &argmax, &grad)
                }
                (OpKind::Relu, Saved::Input(input)) => ops::relu_backward(&input, &grad),
                (OpKind::Sigmoid, Saved::Output(out)) => ops::sigmoid_backward(&out, &grad),
                (OpKind::Dropout, Saved::Mask(mask)) => ops::dropout_backward(mask.as_deref(), &grad),
                (OpKind::Flatten, Saved::Shape(shape)) => {
                    debug_assert_eq!(grad.len(), shape.iter().product::<usize>());
                    grad
                }
                (kind, _) => unreachable!("{kind:?} recorded with mismatched context"),
            };
        }
        Ok(grad)
    }
}
