use crate::baseline::{pgd_batch, AttackConfig};
use crate::error::Result;
use crate::models::ClassifierModel;
use crate::synthdata::LabeledDataset;
use crate::training::classifier::{fit_classifier, initial_classifier};
use crate::training::TrainConfig;

/// Trains a fresh classifier on PGD-perturbed copies of every minibatch.
/// The attack maximises the cross-entropy of the model as it stands before
/// each step.
pub fn adversarial_train(
    data: &LabeledDataset,
    attack: &AttackConfig,
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    attack.validate()?;
    let model = initial_classifier(data, cfg)?;
    fit_classifier(model, data, cfg, |m, x, labels| pgd_batch(m, &x, labels, attack))
}
