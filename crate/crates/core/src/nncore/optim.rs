//! Parameters and optimizers: Adam (default), plain SGD, and global
//! gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::tensor::{rf, Real, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub adam_m: Tensor<F>,
    pub adam_v: Tensor<F>,
    pub step_count: u64,
}

impl<F: Real> Parameter<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Parameter {
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn from_value(value: Tensor<F>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::config("adam betas must lie in (0,1)"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Which optimizer a training loop uses. SGD is kept as an option but Adam
/// is the default everywhere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Adam(AdamConfig),
    Sgd { learning_rate: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

impl Optimizer {
    pub fn update<F: Real>(&self, p: &mut Parameter<F>) {
        match self {
            Optimizer::Adam(cfg) => adam_update(p, cfg),
            Optimizer::Sgd { learning_rate } => sgd_update(p, *learning_rate),
        }
    }
}

/// Bias-corrected Adam step; increments the step count and zeroes the
/// gradient afterwards.
pub fn adam_update<F: Real>(p: &mut Parameter<F>, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let b1 = rf::<F>(cfg.beta1);
    let b2 = rf::<F>(cfg.beta2);
    let one = F::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let lr = rf::<F>(cfg.learning_rate);
    let eps = rf::<F>(cfg.epsilon);

    let g = p.grad.data_mut();
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    let x = p.value.data_mut();
    for i in 0..x.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        x[i] = x[i] - lr * m_hat / (v_hat.sqrt() + eps);
        g[i] = F::zero();
    }
    p.value.assert_finite("adam-updated parameter");
}

pub fn sgd_update<F: Real>(p: &mut Parameter<F>, learning_rate: f64) {
    p.step_count += 1;
    let lr = rf::<F>(learning_rate);
    let g = p.grad.data_mut();
    let x = p.value.data_mut();
    for i in 0..x.len() {
        x[i] = x[i] - lr * g[i];
        g[i] = F::zero();
    }
}

/// Scales every gradient by max_norm/g when the global L2 norm g exceeds
/// max_norm. Returns the factor applied (1.0 when no clipping happened).
pub fn clip_grad_norm<F: Real>(grads: &mut [&mut Tensor<F>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in g.data() {
            let f = v.to_f64().unwrap();
            sq += f * f;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    let ff = rf::<F>(factor);
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = *v * ff;
        }
    }
    factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::tensor::l2_norm;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p: Parameter<f64> = Parameter::zeros(&[3]);
        p.value.data_mut().copy_from_slice(&[1.0, -2.0, 3.0]);
        let before = p.value.clone();
        adam_update(&mut p, &AdamConfig::default());
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let cfg = AdamConfig::default();
        let mut p: Parameter<f64> = Parameter::zeros(&[2]);
        p.grad.data_mut().copy_from_slice(&[0.3, -7.0]);
        adam_update(&mut p, &cfg);
        // First bias-corrected step is -lr * g/(|g| + eps') elementwise.
        for (i, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let moved = p.value.data()[i];
            assert!(
                (moved + sign * cfg.learning_rate).abs() < 1e-6,
                "step {} expected about {} got {}",
                i,
                -sign * cfg.learning_rate,
                moved
            );
        }
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(x) = (x - 5)^2, df/dx = 2(x-5)
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut p: Parameter<f64> = Parameter::zeros(&[1]);
        let loss = |x: f64| (x - 5.0) * (x - 5.0);
        let start = loss(p.value.data()[0]);
        let mut last = start;
        for _ in 0..2 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (x - 5.0);
            adam_update(&mut p, &cfg);
            let now = loss(p.value.data()[0]);
            assert!(now < last, "loss should shrink: {} -> {}", last, now);
            last = now;
        }
    }

    #[test]
    fn clip_factors() {
        let mut a: Tensor<f64> = Tensor::from_vec(&[2], vec![2.0, 0.0]);
        let factor = clip_grad_norm(&mut [&mut a], 1.0);
        assert!((factor - 0.5).abs() < 1e-12);
        assert!((a.data()[0] - 1.0).abs() < 1e-12);

        let mut b: Tensor<f64> = Tensor::from_vec(&[2], vec![0.3, 0.4]);
        let factor = clip_grad_norm(&mut [&mut b], 1.0);
        assert_eq!(factor, 1.0);
        assert_eq!(b.data(), &[0.3, 0.4]);
    }

    #[test]
    fn clip_preserves_direction_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut t = Tensor::from_vec(&[16], v.clone());
            let pre = l2_norm(&v);
            clip_grad_norm(&mut [&mut t], 1.0);
            let post = l2_norm(t.data());
            assert!((post - pre.min(1.0)).abs() < 1e-6);
            if pre > 0.0 {
                let cos = crate::nncore::tensor::dot(t.data(), &v) / (pre * post);
                assert!((cos - 1.0).abs() < 1e-6);
            }
        }
    }
}
