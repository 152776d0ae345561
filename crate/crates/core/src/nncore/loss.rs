//! Softmax / sigmoid losses shared by the sequence models and the probing
//! classifier.

use super::tensor::{rf, Real};
use crate::error::{Error, Result};

/// Numerically stable in-place softmax.
pub fn softmax_in_place<F: Real>(x: &mut [F]) {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in x.iter_mut() {
        *v = *v / sum;
    }
}

/// log(sum(exp(x))) without overflow.
pub fn log_sum_exp<F: Real>(x: &[F]) -> F {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    let s: F = x.iter().map(|v| (*v - max).exp()).sum();
    max + s.ln()
}

/// Cross entropy of a softmax over `logits` against a class index.
/// Returns the loss and d(loss)/d(logits) = softmax(logits) - one_hot.
pub fn softmax_cross_entropy<F: Real>(logits: &[F], target: usize) -> Result<(F, Vec<F>)> {
    if target >= logits.len() {
        return Err(Error::data(format!(
            "target {} out of range for {} classes",
            target,
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut grad: Vec<F> = logits.iter().map(|v| (*v - lse).exp()).collect();
    grad[target] = grad[target] - F::one();
    Ok((loss, grad))
}

/// Loss only, for hot loops that already have the gradient handled.
pub fn softmax_nll<F: Real>(logits: &[F], target: usize) -> F {
    log_sum_exp(logits) - logits[target]
}

pub fn sigmoid<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Binary cross entropy on a single logit. Returns (loss, dloss/dlogit).
pub fn bce_with_logit<F: Real>(logit: F, target_is_one: bool) -> (F, F) {
    let p = sigmoid(logit);
    let y = if target_is_one { F::one() } else { F::zero() };
    // Stable form: log(1+exp(-|x|)) + max(x,0) - x*y
    let abs = logit.abs();
    let loss = (F::one() + (-abs).exp()).ln() + logit.max(F::zero()) - logit * y;
    (loss, p - y)
}

/// log(sigmoid(x)) computed stably.
pub fn log_sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        -(F::one() + (-x).exp()).ln()
    } else {
        x - (F::one() + x.exp()).ln()
    }
}

#[allow(unused)]
fn _silence(_: f64) {
    let _ = rf::<f64>(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_log_v() {
        for v in [2usize, 7, 100] {
            let logits = vec![0.25f64; v];
            let (loss, _) = softmax_cross_entropy(&logits, 0).unwrap();
            assert!((loss - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_closed_form() {
        let (loss, _) = softmax_cross_entropy(&[10.0f64, -10.0], 0).unwrap();
        // ln(1 + e^-20)
        let expect = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-15);
        assert!((loss - 2.0611536e-9).abs() < 1e-12);
    }

    #[test]
    fn grad_sums_to_zero_and_is_simplex_shift() {
        let logits = vec![0.3f64, -1.2, 2.0, 0.0, 0.7];
        let (_, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn softmax_is_probability_simplex() {
        let mut x = vec![3.0f64, -2.0, 0.5, 900.0, -900.0];
        softmax_in_place(&mut x);
        assert!(x.iter().all(|&v| v >= 0.0));
        let sum: f64 = x.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn target_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0f64, 1.0], 2).is_err());
    }

    #[test]
    fn bce_matches_naive() {
        for &(x, y) in &[(0.7f64, true), (-1.3, false), (4.0, false), (-6.0, true)] {
            let (loss, grad) = bce_with_logit(x, y);
            let p = sigmoid(x);
            let naive = if y { -p.ln() } else { -(1.0 - p).ln() };
            assert!((loss - naive).abs() < 1e-9, "loss {} vs {}", loss, naive);
            let yv = if y { 1.0 } else { 0.0 };
            assert!((grad - (p - yv)).abs() < 1e-12);
        }
    }
}
