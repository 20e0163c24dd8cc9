use crate::error::{Error, Result};
use crate::models::dense::{one_hot, Activation, BoundLayer, DenseLayer};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::Rng;

/// Shape of a conditional generator: latent width, class count, hidden widths
/// and output image shape `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub image_shape: [usize; 3],
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            classes: 2,
            hidden: vec![64, 128, 256, 512],
            image_shape: [3, 16, 16],
        }
    }
}

impl GeneratorArch {
    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.classes == 0 || self.image_len() == 0 {
            return Err(Error::InvalidConfig("generator dimensions must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "generator needs at least one positive hidden width".into(),
            ));
        }
        Ok(())
    }
}

/// Conditional generator `g(z, y)`: dense tanh layers and a sigmoid output.
///
/// Layer `i` (1-based) maps `O_{i-1}` to `O_i`; `O_0` is the latent `z` and
/// the one-hot label is appended to it before the first layer. The layer
/// outputs `O_i` are the pre-activation values, so `O_n` holds the logits
/// that the output sigmoid squashes into the image.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    arch: GeneratorArch,
    layers: Vec<DenseLayer>,
}

/// Result of a plain generator evaluation.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// `[c, h, w]` in `[0, 1]`.
    pub image: Tensor,
    /// `O_1..O_n`, one vector per layer.
    pub activations: Vec<Tensor>,
}

/// Graph nodes produced by [`GeneratorModel::build`].
#[derive(Clone, Debug)]
pub struct GeneratorNodes {
    /// `[m, c·h·w]` image rows.
    pub image: NodeId,
    /// Perturbed layer outputs `O_0..O_n` as fed forward.
    pub sites: Vec<NodeId>,
    pub params: Vec<BoundLayer>,
}

impl GeneratorModel {
    pub fn new(arch: GeneratorArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let widths = Self::widths(&arch);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::glorot(w[0], w[1], Self::activation_for(&arch, i), rng))
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: GeneratorArch) -> Result<Self> {
        arch.validate()?;
        let widths = Self::widths(&arch);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::zeros(w[0], w[1], Self::activation_for(&arch, i)))
            .collect();
        Ok(Self { arch, layers })
    }

    pub(crate) fn from_layers(arch: GeneratorArch, layers: Vec<DenseLayer>) -> Result<Self> {
        arch.validate()?;
        let widths = Self::widths(&arch);
        if layers.len() + 1 != widths.len() {
            return Err(Error::InvalidConfig(format!(
                "generator expects {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.inputs() != w[0] || layer.outputs() != w[1] {
                return Err(Error::ShapeMismatch {
                    op: "generator layer",
                    left: vec![i, w[0], w[1]],
                    right: layer.weight().shape().to_vec(),
                });
            }
        }
        Ok(Self { arch, layers })
    }

    fn widths(arch: &GeneratorArch) -> Vec<usize> {
        let mut w = vec![arch.latent_dim + arch.classes];
        w.extend(&arch.hidden);
        w.push(arch.image_len());
        w
    }

    fn activation_for(arch: &GeneratorArch, layer: usize) -> Activation {
        if layer == arch.hidden.len() {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        }
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.arch.image_shape
    }

    /// Number of layers `n`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Widths of the perturbation sites `O_0..O_n`.
    pub fn site_widths(&self) -> Vec<usize> {
        let mut w = vec![self.arch.latent_dim];
        w.extend(self.layers.iter().map(DenseLayer::outputs));
        w
    }

    fn check_inputs(&self, z: &Tensor, y: usize) -> Result<()> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "generator latent",
                left: vec![self.arch.latent_dim],
                right: z.shape().to_vec(),
            });
        }
        if y >= self.arch.classes {
            return Err(Error::IndexOutOfRange {
                op: "generator label",
                index: y,
                len: self.arch.classes,
            });
        }
        Ok(())
    }

    /// Input row `[z | onehot(y)]` for layer 1.
    pub fn input_row(&self, z: &Tensor, y: usize) -> Result<Tensor> {
        self.check_inputs(z, y)?;
        let mut data = z.data().to_vec();
        data.extend(one_hot(&[y], self.arch.classes)?.data());
        Tensor::new(vec![1, data.len()], data)
    }

    /// Pre-activation output of layer `index` (0-based) for a `[m, in]` input.
    pub fn layer_forward(&self, index: usize, input: &Tensor) -> Result<Tensor> {
        let layer = self.layers.get(index).ok_or(Error::IndexOutOfRange {
            op: "generator layer",
            index,
            len: self.layers.len(),
        })?;
        layer.pre_activation(input)
    }

    /// Evaluates `g(z, y)` and records every layer output.
    pub fn forward(&self, z: &Tensor, y: usize) -> Result<GeneratorOutput> {
        let mut h = self.input_row(z, y)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let pre = layer.pre_activation(&h)?;
            h = layer.activate(&pre);
            activations.push(Tensor::vector(pre.into_data()));
        }
        let [c, hh, w] = self.arch.image_shape;
        Ok(GeneratorOutput {
            image: h.reshape(&[c, hh, w])?,
            activations,
        })
    }

    /// Adds the generator to `g` for a batch: `z` is `[m, latent]` and
    /// `labels` has length `m`. `perturb[i]`, when present, is added to layer
    /// output `O_i` (must be broadcast-free, i.e. `[m, width_i]`).
    pub fn build(
        &self,
        g: &mut Graph,
        z: NodeId,
        labels: &[usize],
        perturb: &[Option<NodeId>],
        trainable: bool,
    ) -> Result<GeneratorNodes> {
        let onehot = g.constant(one_hot(labels, self.arch.classes)?);
        let mut o = match perturb.first().copied().flatten() {
            Some(p) => g.add(z, p)?,
            None => z,
        };
        let mut sites = vec![o];
        let mut params = Vec::with_capacity(self.layers.len());
        let mut h = g.concat(o, onehot)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let bound = layer.bind(g, trainable);
            params.push(bound);
            o = layer.pre_node(g, bound, h)?;
            if let Some(p) = perturb.get(i + 1).copied().flatten() {
                o = g.add(o, p)?;
            }
            sites.push(o);
            h = layer.activation().node(g, o)?;
        }
        Ok(GeneratorNodes {
            image: h,
            sites,
            params,
        })
    }
}
