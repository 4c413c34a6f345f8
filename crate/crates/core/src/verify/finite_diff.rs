use crate::error::{Error, Result};

/// Central-difference gradient of `loss` at `theta`, one coordinate at a time.
pub fn finite_diff(mut loss: impl FnMut(&[f64]) -> f64, theta: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::ConfigInvalid(format!("finite-difference step {step}")));
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        x[k] = theta[k] + step;
        let up = loss(&x);
        x[k] = theta[k] - step;
        let down = loss(&x);
        x[k] = theta[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(k));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `max|got − want| / max|want|`; the absolute error when `want` is all zero.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "rel_err on different lengths");
    let diff = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let scale = want.iter().map(|w| w.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
