//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

/// Compares the analytic gradient returned by `f` at `x` against central
/// differences with step `eps`.
///
/// `f` returns the function value together with its analytic gradient. The
/// result is `max_i |g_i - fd_i| / max(1, |fd_i|)`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (fp, _) = f(&probe)?;
        probe[i] = x[i] - eps;
        let (fm, _) = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("f(x +/- eps) at coordinate {i}")));
        }
        let fd = (fp - fm) / (2.0 * eps);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
