use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, relu, sigmoid, Graph, NodeId, Tensor};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => relu(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn node(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Fully connected layer `act(x·W + b)` with `W` stored `[in, out]`.
///
/// Weights sit behind [`Arc`] so evaluation never needs to copy or mutate them.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub(crate) weight: Arc<Tensor>,
    pub(crate) bias: Arc<Tensor>,
    pub(crate) activation: Activation,
}

/// Graph handles for a layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let cols = match *weight.shape() {
            [_, c] => c,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "dense layer",
                    left: weight.shape().to_vec(),
                    right: bias.shape().to_vec(),
                })
            }
        };
        if bias.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "dense layer",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight: Arc::new(weight),
            bias: Arc::new(bias),
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: Arc::new(Tensor::new(vec![inputs, outputs], data).expect("shape")),
            bias: Arc::new(Tensor::zeros(&[outputs])),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Arc::new(Tensor::zeros(&[inputs, outputs])),
            bias: Arc::new(Tensor::zeros(&[outputs])),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Arc<Tensor> {
        &self.weight
    }

    pub fn bias(&self) -> &Arc<Tensor> {
        &self.bias
    }

    /// `x·W + b` for `x` of shape `[m, in]`.
    pub fn pre_activation(&self, x: &Tensor) -> Result<Tensor> {
        let (m, k) = match *x.shape() {
            [m, k] if k == self.inputs() => (m, k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "dense",
                    left: x.shape().to_vec(),
                    right: self.weight.shape().to_vec(),
                })
            }
        };
        let n = self.outputs();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, x.data(), false, self.weight.data(), false, 0.0, &mut out);
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn activate(&self, pre: &Tensor) -> Tensor {
        let act = self.activation;
        pre.map(|v| act.apply(v))
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLayer {
        BoundLayer {
            weight: g.shared(Arc::clone(&self.weight), trainable),
            bias: g.shared(Arc::clone(&self.bias), trainable),
        }
    }

    /// Pre-activation node `x·W + b`.
    pub fn pre_node(&self, g: &mut Graph, bound: BoundLayer, x: NodeId) -> Result<NodeId> {
        let h = g.matmul(x, bound.weight)?;
        g.add_bias(h, bound.bias)
    }

    /// Replaces the parameters with updated values (training only).
    pub(crate) fn set_params(&mut self, weight: Tensor, bias: Tensor) {
        debug_assert_eq!(weight.shape(), self.weight.shape());
        debug_assert_eq!(bias.shape(), self.bias.shape());
        self.weight = Arc::new(weight);
        self.bias = Arc::new(bias);
    }
}

/// One-hot rows `[labels.len(), classes]`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::IndexOutOfRange {
                op: "one_hot",
                index: l,
                len: classes,
            });
        }
        data[r * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Stacks equally sized tensors into rows of a `[n, numel]` matrix.
pub fn stack_rows<'a>(items: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for t in items {
        match width {
            None => width = Some(t.len()),
            Some(w) if w != t.len() => {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![w],
                    right: t.shape().to_vec(),
                })
            }
            _ => {}
        }
        data.extend_from_slice(t.data());
        rows += 1;
    }
    let width = width.ok_or(Error::EmptyDataset)?;
    Tensor::new(vec![rows, width], data)
}
