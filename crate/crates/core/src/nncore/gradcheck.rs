//! Central finite-difference validation of hand-written backward passes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A scalar-valued computation exposing its flattened parameters. Gradient
/// checks run in f64.
pub trait Differentiable {
    fn param_count(&self) -> usize;
    fn get_param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    /// Forward + analytic backward; the gradient is flattened in the same
    /// coordinate order as `get_param`/`set_param`.
    fn loss_and_grad(&mut self) -> (f64, Vec<f64>);
    fn loss(&mut self) -> f64 {
        self.loss_and_grad().0
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub checked: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares the analytic gradient against (f(x+eps)-f(x-eps))/(2 eps) on up
/// to `max_coords` sampled coordinates. The per-coordinate error is relative
/// for large gradients and absolute below magnitude one.
pub fn grad_check<D: Differentiable>(
    model: &mut D,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (base_loss, analytic) = model.loss_and_grad();
    if !base_loss.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::data("non-finite loss or gradient in grad check"));
    }
    let n = model.param_count();
    assert_eq!(analytic.len(), n, "gradient length mismatch");

    let mut coords: Vec<usize> = (0..n).collect();
    if n > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        checked: coords.len(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut sum = 0.0;
    for &i in &coords {
        let x0 = model.get_param(i);
        model.set_param(i, x0 + eps);
        let lp = model.loss();
        model.set_param(i, x0 - eps);
        let lm = model.loss();
        model.set_param(i, x0);
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::data("non-finite loss during finite differences"));
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1.0);
        let err = (a - numeric).abs() / denom;
        sum += err;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    if !coords.is_empty() {
        report.mean_rel_error = sum / coords.len() as f64;
    }
    Ok(report)
}
