//! Training loops for the classifier, the generator (distilled from the
//! renderer or trained as a conditional GAN) and adversarial training.

mod adversarial;
mod cgan;
mod classifier;
mod distill;
mod optim;

pub use adversarial::adversarial_train;
pub use cgan::{
    discriminator_accuracy, train_generator_cgan, warm_up_discriminator, CganConfig, CganHistory,
    CganRun,
};
pub use classifier::{
    accuracy, batch_loss, dataset_matrix, fit_classifier, inject_fault, inject_fault_on,
    train_classifier, BiasVerificationReport, ClassifierTrainer, FaultInjection,
};
pub use distill::{
    distillation_mse, latent_block, scene_from_latent, train_generator_distilled,
    train_generator_distilled_with, DistillConfig, LATENT_BLOCK,
};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    MeanSquared,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub(crate) fn optimizer_for(&self, layers: &[crate::models::DenseLayer]) -> Optimizer {
        Optimizer::new(self.optimizer, self.learning_rate, self.momentum, layers)
    }
}
