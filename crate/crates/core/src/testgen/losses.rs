//! Test losses and failure predicates, all over softmax confidence vectors.

use crate::error::{Error, Result};
use crate::models::ClassifierModel;
use crate::tensor::{argmax, Tensor};

fn max_excluding(conf: &[f64], skip: usize) -> f64 {
    conf.iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_class(conf: &[f64], y: usize) -> Result<()> {
    if y >= conf.len() {
        return Err(Error::IndexOutOfRange {
            op: "class index",
            index: y,
            len: conf.len(),
        });
    }
    Ok(())
}

/// Untargeted loss: the largest class confidence.
pub fn untargeted_loss_of(conf: &[f64]) -> f64 {
    conf.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `max_{y != target} f_y - f_target + c`; a test succeeds when negative.
pub fn targeted_margin_loss_of(conf: &[f64], target: usize, c: f64) -> Result<f64> {
    check_class(conf, target)?;
    Ok(max_excluding(conf, target) - conf[target] + c)
}

pub fn untargeted_loss(f: &ClassifierModel, x: &Tensor) -> Result<f64> {
    Ok(untargeted_loss_of(f.predict(x)?.confidences.data()))
}

pub fn targeted_margin_loss(f: &ClassifierModel, x: &Tensor, target: usize, c: f64) -> Result<f64> {
    targeted_margin_loss_of(f.predict(x)?.confidences.data(), target, c)
}

/// The prediction differs from the true label.
pub fn fails(conf: &[f64], y_true: usize) -> Result<bool> {
    check_class(conf, y_true)?;
    Ok(argmax(conf) != y_true)
}

/// The top confidence exceeds the true label's confidence by more than `c`.
pub fn fails_confidently(conf: &[f64], y_true: usize, c: f64) -> Result<bool> {
    check_class(conf, y_true)?;
    Ok(untargeted_loss_of(conf) - conf[y_true] > c)
}

/// The prediction is `target`.
pub fn fails_targeted(conf: &[f64], target: usize) -> Result<bool> {
    check_class(conf, target)?;
    Ok(argmax(conf) == target)
}

/// `target`'s confidence exceeds every other class by more than `c`.
pub fn fails_confident_targeted(conf: &[f64], target: usize, c: f64) -> Result<bool> {
    check_class(conf, target)?;
    Ok(conf[target] - max_excluding(conf, target) > c)
}
