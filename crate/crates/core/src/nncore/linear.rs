//! Fully-connected layer with accumulate-style backward.

use rand::Rng;

use super::optim::Parameter;
use super::tensor::{matvec_acc, outer_acc, tmatvec_acc, Real};

#[derive(Debug, Clone)]
pub struct Linear<F> {
    /// (out, in)
    pub w: Parameter<F>,
    /// (out)
    pub b: Parameter<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut w = Parameter::zeros(&[output, input]);
        w.value.init_uniform(input, rng);
        Linear {
            w,
            b: Parameter::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.value.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.value.rows()
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut y = self.b.value.data().to_vec();
        matvec_acc(&self.w.value, x, &mut y);
        y
    }

    /// Accumulates dW, db and (optionally) the input gradient.
    pub fn backward(&mut self, x: &[F], dy: &[F], dx: Option<&mut [F]>) {
        outer_acc(&mut self.w.grad, dy, x);
        for (b, d) in self.b.grad.data_mut().iter_mut().zip(dy) {
            *b = *b + *d;
        }
        if let Some(dx) = dx {
            tmatvec_acc(&self.w.value, dy, dx);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.w, &self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_backward_shapes_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin: Linear<f64> = Linear::new(3, 2, &mut rng);
        lin.w
            .value
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 2.0, -1.0, 1.0, 0.5]);
        lin.b.value.data_mut().copy_from_slice(&[0.5, -0.5]);
        let y = lin.forward(&[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![1.0 + 6.0 + 0.5, -1.0 + 2.0 + 1.5 - 0.5]);

        let mut dx = vec![0.0; 3];
        lin.backward(&[1.0, 2.0, 3.0], &[1.0, 1.0], Some(&mut dx));
        assert_eq!(dx, vec![0.0, 1.0, 2.5]);
        assert_eq!(lin.b.grad.data(), &[1.0, 1.0]);
        assert_eq!(lin.w.grad.row(0), &[1.0, 2.0, 3.0]);
    }
}
