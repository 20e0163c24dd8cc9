//! Failing-test generation by perturbing generator layer outputs.

mod export;
mod generate;
mod losses;
mod perturbation;

pub use export::{export_tests, import_tests, tsv_record, TENSORS_FILE, TESTS_FILE, TSV_HEADER};
pub use generate::{
    default_epsilon, generate_test, generate_test_from, pixel_distances, seed_latent, Mode, Status,
    Objective, TestCase, TestGenConfig, TestSource, DEFAULT_CONFIDENCE, DEFAULT_LAYERS,
    DEFAULT_MAX_ITERATIONS, DEFAULT_STEP_SIZE,
};
pub use losses::{
    fails, fails_confident_targeted, fails_confidently, fails_targeted, targeted_margin_loss,
    targeted_margin_loss_of, untargeted_loss, untargeted_loss_of,
};
pub use perturbation::{perturbed_forward, perturbed_graph, similarity_holds, Perturbation};
