use crate::error::{Error, Result};
use crate::models::dense::{one_hot, Activation, BoundLayer, DenseLayer};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorArch {
    pub image_shape: [usize; 3],
    pub classes: usize,
    pub hidden: Vec<usize>,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        Self {
            image_shape: [3, 16, 16],
            classes: 2,
            hidden: vec![256, 64],
        }
    }
}

impl DiscriminatorArch {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.image_shape.iter().product::<usize>() + self.classes];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// Conditional real-vs-generated scorer over `(image, one-hot label)`.
/// The output is an unbounded logit; positive means "real".
#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    arch: DiscriminatorArch,
    layers: Vec<DenseLayer>,
}

impl DiscriminatorModel {
    pub fn new(arch: DiscriminatorArch, rng: &mut Rng) -> Result<Self> {
        if arch.classes == 0 || arch.hidden.contains(&0) {
            return Err(Error::InvalidConfig("discriminator widths must be positive".into()));
        }
        let widths = arch.widths();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub(crate) fn from_layers(arch: DiscriminatorArch, layers: Vec<DenseLayer>) -> Result<Self> {
        let widths = arch.widths();
        if layers.len() + 1 != widths.len()
            || layers
                .iter()
                .zip(widths.windows(2))
                .any(|(l, w)| l.inputs() != w[0] || l.outputs() != w[1])
        {
            return Err(Error::InvalidConfig(
                "discriminator layers do not match architecture".into(),
            ));
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Scalar score for one image and label.
    pub fn score(&self, x: &Tensor, y: usize) -> Result<f64> {
        let mut g = Graph::new();
        let xn = g.constant(x.reshape(&[1, x.len()])?);
        let out = self.build(&mut g, xn, &[y], false)?.0;
        Ok(g.value(out)?.item())
    }

    /// Adds the discriminator to `g`; returns the `[m, 1]` score node.
    pub fn build(
        &self,
        g: &mut Graph,
        x: NodeId,
        labels: &[usize],
        trainable: bool,
    ) -> Result<(NodeId, Vec<BoundLayer>)> {
        let onehot = g.constant(one_hot(labels, self.arch.classes)?);
        let mut h = g.concat(x, onehot)?;
        let mut params = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let bound = layer.bind(g, trainable);
            params.push(bound);
            let pre = layer.pre_node(g, bound, h)?;
            h = layer.activation().node(g, pre)?;
        }
        Ok((h, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_is_scalar() {
        let mut rng = Rng::new(1);
        let d = DiscriminatorModel::new(DiscriminatorArch::default(), &mut rng).unwrap();
        let s = d.score(&Tensor::full(&[3, 16, 16], 0.5), 1).unwrap();
        assert!(s.is_finite());
    }
}
