use super::tensor::Tensor;
use crate::error::Result;

/// Compares an analytic gradient with central finite differences.
///
/// `f` evaluates the scalar function at `x.data` and writes its analytic
/// gradient into `x.grad`. Returns the largest
/// `|analytic - numeric| / max(1e-12, |numeric|)` over all components.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    probe.zero_grad();
    f(&mut probe)?;
    let analytic = probe.grad.clone();

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data[i] += h;
        let fp = f(&mut plus)?;
        let mut minus = x.clone();
        minus.data[i] -= h;
        let fm = f(&mut minus)?;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
