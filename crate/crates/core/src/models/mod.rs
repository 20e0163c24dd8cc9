//! Generator, classifier and discriminator networks plus their weights file.

mod classifier;
mod dense;
mod discriminator;
mod generator;
pub mod weights;

pub use classifier::{prediction_from_logits, ClassifierArch, ClassifierModel, Prediction};
pub use dense::{one_hot, stack_rows, Activation, BoundLayer, DenseLayer};
pub use discriminator::{DiscriminatorArch, DiscriminatorModel};
pub use generator::{GeneratorArch, GeneratorModel, GeneratorNodes, GeneratorOutput};
pub use weights::{load_weights, save_weights, WeightsFile};
