use crate::error::{Error, Result};
use crate::models::{BoundLayer, DenseLayer};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum: `v = mu v + g`, `w -= lr v`.
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer state for a stack of dense layers, ordered
/// `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, layers: &[DenseLayer]) -> Self {
        let zeros: Vec<Tensor> = layers
            .iter()
            .flat_map(|l| [Tensor::zeros(l.weight().shape()), Tensor::zeros(l.bias().shape())])
            .collect();
        let second = if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() };
        Optimizer {
            kind,
            lr,
            momentum,
            first: zeros,
            second,
            steps: 0,
        }
    }

    /// Applies one update given gradients in parameter order.
    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.first.len() || grads.len() != 2 * layers.len() {
            return Err(Error::InvalidConfig(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.first.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        let mut updated = Vec::with_capacity(grads.len());
        for (i, grad) in grads.iter().enumerate() {
            let layer = &layers[i / 2];
            let current = if i % 2 == 0 { layer.weight() } else { layer.bias() };
            let mut value = current.as_ref().clone();
            let m = &mut self.first[i];
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((v, g), w) in m.data_mut().iter_mut().zip(grad.data()).zip(value.data_mut()) {
                        *v = self.momentum * *v + g;
                        *w -= self.lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let s = &mut self.second[i];
                    for (((v, u), g), w) in m
                        .data_mut()
                        .iter_mut()
                        .zip(s.data_mut())
                        .zip(grad.data())
                        .zip(value.data_mut())
                    {
                        *v = ADAM_BETA1 * *v + (1.0 - ADAM_BETA1) * g;
                        *u = ADAM_BETA2 * *u + (1.0 - ADAM_BETA2) * g * g;
                        *w -= self.lr * (*v / bc1) / ((*u / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
            updated.push(value);
        }
        let mut it = updated.into_iter();
        for layer in layers.iter_mut() {
            let (w, b) = (it.next().expect("weight"), it.next().expect("bias"));
            layer.set_params(w, b);
        }
        Ok(())
    }
}

/// Parameter node ids in optimizer order.
pub(crate) fn param_nodes(bound: &[BoundLayer]) -> Vec<crate::tensor::NodeId> {
    bound.iter().flat_map(|b| [b.weight, b.bias]).collect()
}
