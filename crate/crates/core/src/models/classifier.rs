use crate::error::{Error, Result};
use crate::models::dense::{Activation, BoundLayer, DenseLayer};
use crate::tensor::{argmax, softmax_rows, Graph, NodeId, Tensor};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierArch {
    pub image_shape: [usize; 3],
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            image_shape: [3, 16, 16],
            hidden: vec![256, 128],
            classes: 2,
        }
    }
}

impl ClassifierArch {
    pub fn input_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_len()];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.input_len() == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "classifier needs at least two classes and positive widths".into(),
            ));
        }
        Ok(())
    }
}

/// Dense relu classifier ending in a softmax over `k` classes.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    arch: ClassifierArch,
    layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub confidences: Tensor,
    /// Argmax of the confidences, lowest index on ties.
    pub predicted: usize,
}

impl ClassifierModel {
    pub fn new(arch: ClassifierArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
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

    pub fn zeros(arch: ClassifierArch) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub(crate) fn from_layers(arch: ClassifierArch, layers: Vec<DenseLayer>) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        if layers.len() + 1 != widths.len()
            || layers
                .iter()
                .zip(widths.windows(2))
                .any(|(l, w)| l.inputs() != w[0] || l.outputs() != w[1])
        {
            return Err(Error::InvalidConfig(
                "classifier layers do not match architecture".into(),
            ));
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.arch.image_shape {
            return Err(Error::ShapeMismatch {
                op: "classifier input",
                left: self.arch.image_shape.to_vec(),
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Pre-softmax logits for a batch `[m, c·h·w]`.
    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.activate(&layer.pre_activation(&h)?);
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_image(x)?;
        let row = x.reshape(&[1, x.len()])?;
        Ok(Tensor::vector(self.logits_batch(&row)?.into_data()))
    }

    /// Softmax confidences and argmax class for one image `[c, h, w]`.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        Ok(prediction_from_logits(&self.logits(x)?))
    }

    /// Predicted classes for a batch `[m, c·h·w]`.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits_batch(x)?;
        Ok(logits.data().chunks(logits.cols()).map(argmax).collect())
    }

    /// Adds the classifier to `g`; `x` is `[m, c·h·w]`. Returns the logits node.
    pub fn build_logits(
        &self,
        g: &mut Graph,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<BoundLayer>)> {
        let mut h = x;
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

/// Softmax of a logit vector plus its argmax.
pub fn prediction_from_logits(logits: &Tensor) -> Prediction {
    let confidences = softmax_rows(logits);
    let predicted = argmax(confidences.data());
    Prediction {
        confidences,
        predicted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_classifier_is_uniform_and_picks_class_zero() {
        let arch = ClassifierArch {
            classes: 4,
            ..ClassifierArch::default()
        };
        let f = ClassifierModel::zeros(arch).unwrap();
        let p = f.predict(&Tensor::full(&[3, 16, 16], 0.3)).unwrap();
        assert_eq!(p.predicted, 0);
        for &c in p.confidences.data() {
            assert!((c - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_image_shape() {
        let f = ClassifierModel::zeros(ClassifierArch::default()).unwrap();
        assert!(matches!(
            f.predict(&Tensor::zeros(&[3, 8, 8])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn confidences_sum_to_one() {
        let mut rng = Rng::new(2);
        let f = ClassifierModel::new(ClassifierArch::default(), &mut rng).unwrap();
        for _ in 0..20 {
            let x = Tensor::new(vec![3, 16, 16], (0..768).map(|_| rng.uniform()).collect()).unwrap();
            let p = f.predict(&x).unwrap();
            assert!((p.confidences.sum() - 1.0).abs() < 1e-9);
            assert_eq!(p.predicted, p.confidences.argmax());
        }
    }

    #[test]
    fn shifting_logits_changes_nothing() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let logits = Tensor::vector((0..5).map(|_| 3.0 * rng.normal()).collect());
            let shift = 50.0 * rng.normal();
            let a = prediction_from_logits(&logits);
            let b = prediction_from_logits(&logits.map(|v| v + shift));
            assert_eq!(a.predicted, b.predicted);
            for (x, y) in a.confidences.data().iter().zip(b.confidences.data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
