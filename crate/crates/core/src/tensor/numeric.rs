use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, element by element.
pub fn finite_difference_gradient<F>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = x - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = x;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps entries whose true value
/// is numerically zero from dominating on round-off alone.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise [`relative_error`] between two equally shaped tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> Result<f64> {
    a.check_same_shape("max_relative_error", b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max))
}
