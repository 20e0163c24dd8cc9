//! Pixel-space test generation by projected gradient descent.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::ClassifierModel;
use crate::tensor::{argmax, Graph, NodeId, Tensor};
use crate::testgen::{
    pixel_distances, Mode, Objective, Status, TestCase, TestSource, DEFAULT_CONFIDENCE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    L2,
    Linf,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        }
    }

    pub fn of(self, t: &Tensor) -> f64 {
        match self {
            NormKind::L2 => t.l2_norm(),
            NormKind::Linf => t.linf_norm(),
        }
    }

    /// Reference budget for 16×16×3 images: `16/255` for l∞, and the
    /// l2 bound 3 at 512×512×3 rescaled by the square root of the pixel ratio.
    pub fn default_epsilon(self) -> f64 {
        match self {
            NormKind::L2 => 3.0 * (16.0 * 16.0 / (512.0 * 512.0) as f64).sqrt(),
            NormKind::Linf => 16.0 / 255.0,
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            _ => Err(Error::InvalidConfig(format!("unknown norm {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub norm: NormKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub mode: Mode,
    pub objective: Objective,
    /// Margin for confident-targeted attacks.
    pub confidence: f64,
    pub seed: u64,
}

pub const DEFAULT_ATTACK_STEPS: usize = 40;

impl AttackConfig {
    /// Untargeted attack with the reference budget for `norm`.
    pub fn new(norm: NormKind) -> Self {
        let epsilon = norm.default_epsilon();
        AttackConfig {
            norm,
            epsilon,
            step_size: 2.5 * epsilon / DEFAULT_ATTACK_STEPS as f64,
            steps: DEFAULT_ATTACK_STEPS,
            mode: Mode::Untargeted,
            objective: Objective::LogConfidence,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack step size must be nonnegative, got {}",
                self.step_size
            )));
        }
        if !(self.confidence >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence margin must be nonnegative, got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::new(NormKind::Linf)
    }
}

/// Projects `delta` onto the `eps` ball of `norm` centred at zero.
pub fn project(delta: &Tensor, norm: NormKind, eps: f64) -> Tensor {
    match norm {
        NormKind::Linf => delta.map(|v| v.clamp(-eps, eps)),
        NormKind::L2 => {
            let n = delta.l2_norm();
            if n > eps {
                let s = eps / n;
                let mut out = delta.map(|v| v * s);
                // Rounding can leave the rescaled norm a hair above eps; shrink
                // until it is not, so projecting again is the identity.
                while out.l2_norm() > eps {
                    let t = eps / out.l2_norm() * (1.0 - f64::EPSILON);
                    out = out.map(|v| v * t);
                }
                out
            } else {
                delta.clone()
            }
        }
    }
}

/// Projects `candidate` onto the ball around `x`, then clips to `[0, 1]`.
/// Clipping only moves coordinates towards `x`, so the ball still holds.
pub fn project_point(x: &Tensor, candidate: &Tensor, norm: NormKind, eps: f64) -> Result<Tensor> {
    let delta = project(&candidate.zip_map(x, |a, b| a - b)?, norm, eps);
    x.zip_map(&delta, |a, d| (a + d).clamp(0.0, 1.0))
}

fn ascent_direction(grad: &Tensor, norm: NormKind) -> Tensor {
    match norm {
        NormKind::Linf => grad.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
        NormKind::L2 => {
            let n = grad.l2_norm();
            if n > 0.0 {
                grad.scale(1.0 / n)
            } else {
                grad.clone()
            }
        }
    }
}

/// Scalar attack loss over logits `[m, k]`; attacks descend it.
fn attack_loss(
    g: &mut Graph,
    logits: NodeId,
    y0: usize,
    target: usize,
    mode: Mode,
    objective: Objective,
    c: f64,
) -> Result<NodeId> {
    let loss = match (objective, mode) {
        (Objective::Confidence, Mode::Untargeted) => {
            let conf = g.softmax(logits)?;
            g.row_max(conf, None)?
        }
        (Objective::Confidence, _) => {
            let conf = g.softmax(logits)?;
            let other = g.row_max(conf, Some(target))?;
            let own = g.column(conf, target)?;
            let diff = g.sub(other, own)?;
            g.add_scalar(diff, mode.margin(c))?
        }
        (Objective::LogConfidence, Mode::Untargeted) => {
            let own = g.column(logits, y0)?;
            let other = g.row_max(logits, Some(y0))?;
            g.sub(own, other)?
        }
        (Objective::LogConfidence, _) => {
            let other = g.row_max(logits, Some(target))?;
            let own = g.column(logits, target)?;
            g.sub(other, own)?
        }
    };
    g.sum(loss)
}

fn input_gradient(
    f: &ClassifierModel,
    x: &Tensor,
    build: impl FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.variable(x.reshape(&[1, x.len()])?);
    let (logits, _) = f.build_logits(&mut g, xn, false)?;
    let root = build(&mut g, logits)?;
    let grad = g.backward(root, &[xn])?.pop().expect("one gradient");
    if !grad.is_finite() {
        return Err(Error::NonFinite("attack gradient"));
    }
    grad.reshape(x.shape())
}

/// Class the attack aims for: the most confident wrong class on `x`.
fn default_target(f: &ClassifierModel, x: &Tensor, y_true: usize) -> Result<usize> {
    let logits = f.logits(x)?;
    let mut masked = logits.into_data();
    masked[y_true] = f64::NEG_INFINITY;
    Ok(argmax(&masked))
}

/// PGD from `x` towards failure; targeted modes aim at the most confident
/// wrong class.
pub fn pgd_attack(
    f: &ClassifierModel,
    x: &Tensor,
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<(Tensor, bool)> {
    check_label(f, y_true)?;
    let target = default_target(f, x, y_true)?;
    pgd_attack_to(f, x, y_true, target, cfg)
}

fn check_label(f: &ClassifierModel, y: usize) -> Result<()> {
    if y >= f.classes() {
        return Err(Error::IndexOutOfRange {
            op: "attack class",
            index: y,
            len: f.classes(),
        });
    }
    Ok(())
}

/// PGD from `x` with an explicit target class (ignored when untargeted).
pub fn pgd_attack_to(
    f: &ClassifierModel,
    x: &Tensor,
    y_true: usize,
    target: usize,
    cfg: &AttackConfig,
) -> Result<(Tensor, bool)> {
    cfg.validate()?;
    check_label(f, y_true)?;
    check_label(f, target)?;
    let mut adv = x.clone();
    for _ in 0..cfg.steps {
        let grad = input_gradient(f, &adv, |g, logits| {
            attack_loss(g, logits, y_true, target, cfg.mode, cfg.objective, cfg.confidence)
        })?;
        let mut candidate = adv.clone();
        candidate.add_scaled(&ascent_direction(&grad, cfg.norm), -cfg.step_size)?;
        adv = project_point(x, &candidate, cfg.norm, cfg.epsilon)?;
        debug_assert!(cfg.norm.of(&adv.zip_map(x, |a, b| a - b)?) <= cfg.epsilon + 1e-9);
        debug_assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let conf = f.predict(&adv)?.confidences;
    let success = cfg.mode.succeeded(conf.data(), y_true, target, cfg.confidence)?;
    Ok((adv, success))
}

/// Runs [`pgd_attack_to`] and packages the outcome as a test case.
pub fn pixel_test(
    f: &ClassifierModel,
    x: &Tensor,
    y_true: usize,
    target: usize,
    cfg: &AttackConfig,
) -> Result<TestCase> {
    let seed_confidences = f.predict(x)?.confidences;
    let seed_ok = argmax(seed_confidences.data()) == y_true;
    let (adv, success) = if seed_ok {
        pgd_attack_to(f, x, y_true, target, cfg)?
    } else {
        (x.clone(), false)
    };
    let status = match (seed_ok, success) {
        (false, _) => Status::SeedMisclassified,
        (true, true) => Status::Success,
        (true, false) => Status::IterationCap,
    };
    let test_confidences = f.predict(&adv)?.confidences;
    let (pixel_l2, pixel_linf) = pixel_distances(x, &adv);
    Ok(TestCase {
        id: 0,
        seed_class: y_true,
        target: (cfg.mode != Mode::Untargeted).then_some(target),
        mode: cfg.mode,
        source: TestSource::Pixel {
            delta: adv.zip_map(x, |a, b| a - b)?,
        },
        seed_image: x.clone(),
        test_image: adv,
        seed_confidences,
        test_confidences,
        status,
        iterations: if seed_ok { cfg.steps } else { 0 },
        perturbation_norm: 0.0,
        pixel_l2,
        pixel_linf,
    })
}

/// Untargeted PGD on a batch `[m, c·h·w]`, ascending the mean cross-entropy.
/// Each row is projected onto its own ball.
pub fn pgd_batch(
    f: &ClassifierModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 || cfg.steps == 0 {
        return Ok(x.clone());
    }
    let (m, n) = (x.rows(), x.cols());
    let mut adv = x.clone();
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let xn = g.variable(adv.clone());
        let (logits, _) = f.build_logits(&mut g, xn, false)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let grad = g.backward(loss, &[xn])?.pop().expect("one gradient");
        if !grad.is_finite() {
            return Err(Error::NonFinite("attack gradient"));
        }
        let mut next = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = |t: &Tensor| Tensor::vector(t.row_slice(r).to_vec());
            let (x0, cur, gr) = (row(x), row(&adv), row(&grad));
            let mut candidate = cur;
            candidate.add_scaled(&ascent_direction(&gr, cfg.norm), cfg.step_size)?;
            next.extend(project_point(&x0, &candidate, cfg.norm, cfg.epsilon)?.into_data());
        }
        adv = Tensor::new(vec![m, n], next)?;
    }
    Ok(adv)
}
