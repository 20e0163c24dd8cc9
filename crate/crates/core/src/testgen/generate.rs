use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Graph, Tensor};
use crate::testgen::losses::{
    fails, fails_confident_targeted, fails_targeted, targeted_margin_loss_of, untargeted_loss_of,
};
use crate::testgen::perturbation::{perturbed_forward, perturbed_graph, Perturbation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Untargeted,
    Targeted,
    ConfidentTargeted,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Untargeted => "untargeted",
            Mode::Targeted => "targeted",
            Mode::ConfidentTargeted => "confident-targeted",
        }
    }

    /// Margin used by the loss in this mode.
    pub fn margin(self, c: f64) -> f64 {
        match self {
            Mode::ConfidentTargeted => c,
            _ => 0.0,
        }
    }

    /// Whether confidences `conf` satisfy this mode's failure definition.
    pub fn succeeded(self, conf: &[f64], y0: usize, target: usize, c: f64) -> Result<bool> {
        match self {
            Mode::Untargeted => fails(conf, y0),
            Mode::Targeted => fails_targeted(conf, target),
            Mode::ConfidentTargeted => fails_confident_targeted(conf, target, c),
        }
    }

    pub fn loss(self, conf: &[f64], target: usize, c: f64) -> Result<f64> {
        match self {
            Mode::Untargeted => Ok(untargeted_loss_of(conf)),
            _ => targeted_margin_loss_of(conf, target, self.margin(c)),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::Untargeted, Mode::Targeted, Mode::ConfidentTargeted]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

/// Quantity the gradient walk descends. Success is always judged on the
/// confidences by the mode's failure definition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    /// The loss on softmax confidences.
    Confidence,
    /// The same loss on log-confidences, where the margin reduces to a logit
    /// difference and does not vanish when the classifier saturates.
    LogConfidence,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Confidence => "confidence",
            Objective::LogConfidence => "log-confidence",
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Objective::Confidence, Objective::LogConfidence]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestGenConfig {
    pub epsilon: f64,
    pub confidence: f64,
    pub mode: Mode,
    pub objective: Objective,
    pub step_size: f64,
    pub max_iterations: usize,
    /// Indices of the perturbable layer outputs (0 is the latent).
    pub layers: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_STEP_SIZE: f64 = 0.005;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
pub const DEFAULT_CONFIDENCE: f64 = 0.999;
pub const DEFAULT_LAYERS: [usize; 3] = [0, 1, 2];

impl TestGenConfig {
    /// Defaults for `g`, with the similarity bound scaled to the number of
    /// perturbable activations.
    pub fn for_generator(g: &GeneratorModel) -> Self {
        let layers = DEFAULT_LAYERS.to_vec();
        TestGenConfig {
            epsilon: default_epsilon(g, &layers),
            confidence: DEFAULT_CONFIDENCE,
            mode: Mode::ConfidentTargeted,
            objective: Objective::LogConfidence,
            step_size: DEFAULT_STEP_SIZE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            layers,
            seed: 0,
        }
    }

    pub fn validate(&self, g: &GeneratorModel) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        if !(self.epsilon > 0.0) {
            return err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.confidence >= 0.0) {
            return err(format!("confidence margin must be nonnegative, got {}", self.confidence));
        }
        if !(self.step_size > 0.0) {
            return err(format!("step size must be positive, got {}", self.step_size));
        }
        let sites = g.site_widths().len();
        if self.layers.is_empty() {
            return err("no perturbable layers".into());
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= sites) {
            return err(format!("layer {l} out of range for {sites} perturbation sites"));
        }
        let mut sorted = self.layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.layers.len() {
            return err("duplicate perturbable layers".into());
        }
        Ok(())
    }
}

/// `2 sqrt(N) 0.05` where `N` counts the activations in `layers`.
pub fn default_epsilon(g: &GeneratorModel, layers: &[usize]) -> f64 {
    let widths = g.site_widths();
    let n: usize = layers.iter().filter_map(|&l| widths.get(l)).sum();
    2.0 * (n as f64).sqrt() * 0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Success,
    SeedMisclassified,
    IterationCap,
    EpsilonExceeded,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::SeedMisclassified => "seed-misclassified",
            Status::IterationCap => "iteration-cap",
            Status::EpsilonExceeded => "epsilon-exceeded",
        }
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Status::Success, Status::SeedMisclassified, Status::IterationCap, Status::EpsilonExceeded]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown status {s:?}")))
    }
}

/// How a test input was derived from its seed.
#[derive(Clone, Debug, PartialEq)]
pub enum TestSource {
    Semantic { latent: Tensor, perturbation: Perturbation },
    Pixel { delta: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestCase {
    pub id: usize,
    pub seed_class: usize,
    /// Target class; `None` for untargeted tests.
    pub target: Option<usize>,
    pub mode: Mode,
    pub source: TestSource,
    pub seed_image: Tensor,
    pub test_image: Tensor,
    pub seed_confidences: Tensor,
    pub test_confidences: Tensor,
    pub status: Status,
    pub iterations: usize,
    /// Flattened l2 norm of the activation perturbation (0 for pixel tests).
    pub perturbation_norm: f64,
    pub pixel_l2: f64,
    pub pixel_linf: f64,
}

/// `(l2, linf)` distance between two images.
pub fn pixel_distances(a: &Tensor, b: &Tensor) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (x - y).abs();
        l2 += d * d;
        linf = linf.max(d);
    }
    (l2.sqrt(), linf)
}

impl TestCase {
    /// Margin achieved on the test image: `f_target - max_{y != target} f_y`
    /// for targeted tests, `max_{y != y0} f_y - f_y0` otherwise.
    pub fn achieved_margin(&self) -> f64 {
        let conf = self.test_confidences.data();
        match self.target {
            Some(t) if self.mode != Mode::Untargeted => -targeted_margin_loss_of(conf, t, 0.0).unwrap_or(f64::NAN),
            _ => targeted_margin_loss_of(conf, self.seed_class, 0.0).unwrap_or(f64::NAN),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        match &self.source {
            TestSource::Semantic { perturbation, .. } => Some(perturbation),
            TestSource::Pixel { .. } => None,
        }
    }
}

/// Draws the seed latent for `cfg.seed`.
pub fn seed_latent(g: &GeneratorModel, seed: u64) -> Tensor {
    let mut rng = Rng::derive(derive_seed(seed, "testgen"), "latent");
    Tensor::vector((0..g.latent_dim()).map(|_| rng.normal()).collect())
}

/// Gradient walk from a latent drawn from `cfg.seed`.
pub fn generate_test(
    g: &GeneratorModel,
    f: &ClassifierModel,
    y0: usize,
    y1: usize,
    cfg: &TestGenConfig,
) -> Result<TestCase> {
    generate_test_from(g, f, &seed_latent(g, cfg.seed), y0, y1, cfg)
}

/// Loss and its gradient with respect to each configured site.
fn loss_and_gradient(
    g: &GeneratorModel,
    f: &ClassifierModel,
    z: &Tensor,
    y0: usize,
    target: usize,
    p: &Perturbation,
    cfg: &TestGenConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut graph = Graph::new();
    let (nodes, vars) = perturbed_graph(&mut graph, g, z, y0, p, &cfg.layers)?;
    let (logits, _) = f.build_logits(&mut graph, nodes.image, false)?;
    let loss = match (cfg.objective, cfg.mode) {
        (Objective::Confidence, Mode::Untargeted) => {
            let conf = graph.softmax(logits)?;
            graph.row_max(conf, None)?
        }
        (Objective::Confidence, mode) => {
            let conf = graph.softmax(logits)?;
            let other = graph.row_max(conf, Some(target))?;
            let own = graph.column(conf, target)?;
            let diff = graph.sub(other, own)?;
            graph.add_scalar(diff, mode.margin(cfg.confidence))?
        }
        // log f_a - log f_b = logit_a - logit_b; the constant margin does not
        // affect the gradient.
        (Objective::LogConfidence, Mode::Untargeted) => {
            let own = graph.column(logits, y0)?;
            let other = graph.row_max(logits, Some(y0))?;
            graph.sub(own, other)?
        }
        (Objective::LogConfidence, _) => {
            let other = graph.row_max(logits, Some(target))?;
            let own = graph.column(logits, target)?;
            graph.sub(other, own)?
        }
    };
    let root = graph.sum(loss)?;
    let value = graph.value(root)?.item();
    let grads = graph.backward(root, &vars)?;
    Ok((value, grads))
}

/// Gradient walk `p <- p - eta grad L(p)` from `p = 0` for latent `z`.
pub fn generate_test_from(
    g: &GeneratorModel,
    f: &ClassifierModel,
    z: &Tensor,
    y0: usize,
    y1: usize,
    cfg: &TestGenConfig,
) -> Result<TestCase> {
    cfg.validate(g)?;
    if y0 == y1 {
        return Err(Error::InvalidConfig(format!("seed and target class are both {y0}")));
    }
    for y in [y0, y1] {
        if y >= f.classes() || y >= g.classes() {
            return Err(Error::IndexOutOfRange {
                op: "test class",
                index: y,
                len: f.classes().min(g.classes()),
            });
        }
    }
    let seed_image = g.forward(z, y0)?.image;
    let seed_pred = f.predict(&seed_image)?;
    let mut p = Perturbation::zeros(g);
    let target = (cfg.mode != Mode::Untargeted).then_some(y1);

    let finish = |p: Perturbation, status: Status, iterations: usize| -> Result<TestCase> {
        let test_image = perturbed_forward(g, z, y0, &p)?;
        let test_confidences = f.predict(&test_image)?.confidences;
        let (pixel_l2, pixel_linf) = pixel_distances(&seed_image, &test_image);
        Ok(TestCase {
            id: 0,
            seed_class: y0,
            target,
            mode: cfg.mode,
            perturbation_norm: p.flattened_norm(),
            source: TestSource::Semantic {
                latent: z.clone(),
                perturbation: p,
            },
            seed_image: seed_image.clone(),
            test_image,
            seed_confidences: seed_pred.confidences.clone(),
            test_confidences,
            status,
            iterations,
            pixel_l2,
            pixel_linf,
        })
    };

    if seed_pred.predicted != y0 {
        return finish(p, Status::SeedMisclassified, 0);
    }
    let mut iterations = 0;
    loop {
        let image = perturbed_forward(g, z, y0, &p)?;
        let conf = f.predict(&image)?.confidences;
        if cfg.mode.succeeded(conf.data(), y0, y1, cfg.confidence)? {
            return finish(p, Status::Success, iterations);
        }
        if iterations >= cfg.max_iterations {
            return finish(p, Status::IterationCap, iterations);
        }
        let (_, grads) = loss_and_gradient(g, f, z, y0, y1, &p, cfg)?;
        for (&site, grad) in cfg.layers.iter().zip(&grads) {
            if !grad.is_finite() {
                return Err(Error::NonFinite("perturbation gradient"));
            }
            p.site_mut(site).add_scaled(&grad.reshape(&[grad.len()])?, -cfg.step_size)?;
        }
        iterations += 1;
        if p.flattened_norm() >= cfg.epsilon {
            return finish(p, Status::EpsilonExceeded, iterations);
        }
    }
}
