//! Central-difference gradient oracle.

use super::Tensor;
use crate::error::{Error, Result};

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per
/// coordinate. `f` must be a pure scalar function, finite near `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Config(format!("finite_diff_grad: h must be > 0, got {h}")));
    }
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite function value near coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Relative disagreement between two gradients of the same shape:
/// `||a - b|| / max(||a||, ||b||)`. When both norms sit below the
/// finite-difference noise floor (an analytically zero gradient measured
/// through cancellation noise), the absolute difference is returned
/// instead, since a ratio of noise terms is meaningless.
pub fn grad_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-6 {
        return diff;
    }
    diff / denom
}
