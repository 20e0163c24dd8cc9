use crate::error::{Error, Result};
use crate::models::{stack_rows, ClassifierArch, ClassifierModel};
use crate::rng::{derive_indexed, derive_seed, Rng};
use crate::synthdata::{build_biased_dataset, BiasSpec, BiasedSplits, LabeledDataset};
use crate::tensor::{Graph, Tensor};
use crate::training::optim::{param_nodes, Optimizer};
use crate::training::{LossKind, TrainConfig};

pub const ALIGNED_THRESHOLD: f64 = 0.9;
pub const COUNTER_THRESHOLD: f64 = 0.3;

/// Holdout accuracies used to decide whether a bias was learned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasVerificationReport {
    pub aligned_accuracy: f64,
    pub counter_accuracy: f64,
    pub fault_acquired: bool,
}

impl BiasVerificationReport {
    pub fn new(aligned_accuracy: f64, counter_accuracy: f64) -> Self {
        BiasVerificationReport {
            aligned_accuracy,
            counter_accuracy,
            fault_acquired: aligned_accuracy >= ALIGNED_THRESHOLD
                && counter_accuracy <= COUNTER_THRESHOLD,
        }
    }
}

/// Images as rows of a `[n, c·h·w]` matrix plus their labels.
pub fn dataset_matrix(data: &LabeledDataset) -> Result<(Tensor, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((stack_rows(data.images())?, data.labels()))
}

pub(crate) fn gather_rows(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let w = x.cols();
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(x.row_slice(r));
    }
    Tensor::new(vec![rows.len(), w], data)
}

/// Mean softmax cross-entropy of `model` on a batch.
pub fn batch_loss(model: &ClassifierModel, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let (logits, _) = model.build_logits(&mut g, xn, false)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    Ok(g.value(loss)?.item())
}

/// Fraction of `data` that `model` classifies correctly.
pub fn accuracy(model: &ClassifierModel, data: &LabeledDataset) -> Result<f64> {
    let (x, labels) = dataset_matrix(data)?;
    let predicted = model.predict_batch(&x)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// A classifier plus its optimizer state.
#[derive(Clone, Debug)]
pub struct ClassifierTrainer {
    pub model: ClassifierModel,
    optimizer: Optimizer,
}

impl ClassifierTrainer {
    pub fn new(model: ClassifierModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = cfg.optimizer_for(model.layers());
        Ok(ClassifierTrainer { model, optimizer })
    }

    /// One optimizer step on a batch; returns the loss before the step.
    pub fn step(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let (logits, bound) = self.model.build_logits(&mut g, xn, true)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let value = g.value(loss)?.item();
        if !value.is_finite() {
            return Err(Error::NonFinite("classifier loss"));
        }
        let grads = g.backward(loss, &param_nodes(&bound))?;
        self.optimizer.step(self.model.layers_mut(), &grads)?;
        Ok(value)
    }
}

/// Minibatch training of `model` on `data`. `transform` may replace each
/// batch (e.g. with adversarial examples) before the gradient step.
pub fn fit_classifier<F>(
    model: ClassifierModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut transform: F,
) -> Result<ClassifierModel>
where
    F: FnMut(&ClassifierModel, Tensor, &[usize]) -> Result<Tensor>,
{
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::InvalidConfig("classifiers train with cross-entropy".into()));
    }
    let (x, labels) = dataset_matrix(data)?;
    if let Some(&l) = labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::IndexOutOfRange {
            op: "classifier label",
            index: l,
            len: model.classes(),
        });
    }
    let mut trainer = ClassifierTrainer::new(model, cfg)?;
    let seed = derive_seed(cfg.seed, "classifier");
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..cfg.epochs {
        Rng::new(derive_indexed(seed, "epoch", epoch as u64)).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_rows(&x, chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = transform(&trainer.model, batch, &batch_labels)?;
            trainer.step(&batch, &batch_labels)?;
        }
    }
    Ok(trainer.model)
}

pub(crate) fn initial_classifier(data: &LabeledDataset, cfg: &TrainConfig) -> Result<ClassifierModel> {
    let arch = ClassifierArch {
        classes: data.class_count().max(2),
        ..ClassifierArch::default()
    };
    ClassifierModel::new(arch, &mut Rng::derive(derive_seed(cfg.seed, "classifier"), "init"))
}

/// Trains a fresh classifier with as many classes as `data`'s largest label
/// implies (at least two).
pub fn train_classifier(data: &LabeledDataset, cfg: &TrainConfig) -> Result<ClassifierModel> {
    cfg.validate()?;
    let model = initial_classifier(data, cfg)?;
    fit_classifier(model, data, cfg, |_, x, _| Ok(x))
}

#[derive(Clone, Debug)]
pub struct FaultInjection {
    pub model: ClassifierModel,
    pub report: BiasVerificationReport,
}

/// Trains on the biased split and verifies the bias on both holdouts.
pub fn inject_fault_on(splits: &BiasedSplits, cfg: &TrainConfig) -> Result<FaultInjection> {
    let model = train_classifier(&splits.train, cfg)?;
    let report = BiasVerificationReport::new(
        accuracy(&model, &splits.holdout_aligned)?,
        accuracy(&model, &splits.holdout_counter)?,
    );
    Ok(FaultInjection { model, report })
}

/// Builds the biased dataset from `seed` and injects the fault.
pub fn inject_fault(
    bias: &BiasSpec,
    n_per_class: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(FaultInjection, BiasedSplits)> {
    let splits = build_biased_dataset(bias, n_per_class, seed)?;
    Ok((inject_fault_on(&splits, cfg)?, splits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_is_the_threshold_rule() {
        assert!(BiasVerificationReport::new(0.9, 0.3).fault_acquired);
        assert!(!BiasVerificationReport::new(0.899, 0.0).fault_acquired);
        assert!(!BiasVerificationReport::new(1.0, 0.301).fault_acquired);
        assert!(BiasVerificationReport::new(1.0, 0.0).fault_acquired);
    }
}
