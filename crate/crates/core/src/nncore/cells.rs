//! LSTM and GRU step kernels with hand-written backward passes.
//!
//! Gate layouts (rows of the stacked weight matrices):
//!   LSTM: [input, forget, candidate, output]
//!   GRU:  [reset, update, candidate]
//! GRU uses h' = (1-z)*n + z*h with the reset gate applied to W_hn*h.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::optim::Parameter;
use super::tensor::{
    debug_assert_all_finite, matvec, matvec_acc, outer_acc, rf, tmatvec_acc, Real, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(&self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// One recurrent cell (a single layer and direction).
#[derive(Debug, Clone)]
pub struct RecurrentCell<F> {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    /// (gates*hidden, input)
    pub w_x: Parameter<F>,
    /// (gates*hidden, hidden)
    pub w_h: Parameter<F>,
    /// (gates*hidden)
    pub bias: Parameter<F>,
}

/// Values cached by a forward step, consumed by the matching backward step.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    x: Vec<F>,
    h_in: Vec<F>,
    c_in: Vec<F>,
    /// Post-activation gates, stacked in layout order.
    gates: Vec<F>,
    /// LSTM: tanh(c'); GRU: W_hn * h_in.
    aux: Vec<F>,
}

impl<F: Real> RecurrentCell<F> {
    pub fn new(kind: CellKind, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let g = kind.gates();
        let mut w_x = Parameter::zeros(&[g * hidden_size, input_size]);
        let mut w_h = Parameter::zeros(&[g * hidden_size, hidden_size]);
        let bias = Parameter::zeros(&[g * hidden_size]);
        w_x.value.init_uniform(input_size, rng);
        w_h.value.init_uniform(hidden_size, rng);
        let mut cell = RecurrentCell {
            kind,
            input_size,
            hidden_size,
            w_x,
            w_h,
            bias,
        };
        if kind == CellKind::Lstm {
            // Forget-gate bias starts at +1.
            let k = hidden_size;
            for v in &mut cell.bias.value.data_mut()[k..2 * k] {
                *v = F::one();
            }
        }
        cell
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    /// One step. `c` is ignored for GRU (pass an empty slice).
    /// Returns (h', c', cache); c' is empty for GRU.
    pub fn step(&self, x: &[F], h: &[F], c: &[F]) -> (Vec<F>, Vec<F>, StepCache<F>) {
        assert_eq!(x.len(), self.input_size, "cell input size");
        assert_eq!(h.len(), self.hidden_size, "cell hidden size");
        let k = self.hidden_size;
        match self.kind {
            CellKind::Lstm => {
                assert_eq!(c.len(), k, "cell state size");
                let mut pre = self.bias.value.data().to_vec();
                matvec_acc(&self.w_x.value, x, &mut pre);
                matvec_acc(&self.w_h.value, h, &mut pre);
                let mut gates = vec![F::zero(); 4 * k];
                for i in 0..k {
                    gates[i] = sigmoid(pre[i]);
                    gates[k + i] = sigmoid(pre[k + i]);
                    gates[2 * k + i] = pre[2 * k + i].tanh();
                    gates[3 * k + i] = sigmoid(pre[3 * k + i]);
                }
                let mut c2 = vec![F::zero(); k];
                let mut tanh_c2 = vec![F::zero(); k];
                let mut h2 = vec![F::zero(); k];
                for i in 0..k {
                    c2[i] = gates[k + i] * c[i] + gates[i] * gates[2 * k + i];
                    tanh_c2[i] = c2[i].tanh();
                    h2[i] = gates[3 * k + i] * tanh_c2[i];
                }
                debug_assert_all_finite(&h2, "lstm hidden");
                let cache = StepCache {
                    x: x.to_vec(),
                    h_in: h.to_vec(),
                    c_in: c.to_vec(),
                    gates,
                    aux: tanh_c2,
                };
                (h2, c2, cache)
            }
            CellKind::Gru => {
                let mut pre = self.bias.value.data().to_vec();
                matvec_acc(&self.w_x.value, x, &mut pre);
                let mut hpre = vec![F::zero(); 3 * k];
                matvec(&self.w_h.value, h, &mut hpre);
                let mut gates = vec![F::zero(); 3 * k];
                let mut hh = vec![F::zero(); k];
                for i in 0..k {
                    gates[i] = sigmoid(pre[i] + hpre[i]);
                    gates[k + i] = sigmoid(pre[k + i] + hpre[k + i]);
                    hh[i] = hpre[2 * k + i];
                }
                for i in 0..k {
                    let r = gates[i];
                    gates[2 * k + i] = (pre[2 * k + i] + r * hh[i]).tanh();
                }
                let mut h2 = vec![F::zero(); k];
                for i in 0..k {
                    let z = gates[k + i];
                    let n = gates[2 * k + i];
                    h2[i] = (F::one() - z) * n + z * h[i];
                }
                debug_assert_all_finite(&h2, "gru hidden");
                let cache = StepCache {
                    x: x.to_vec(),
                    h_in: h.to_vec(),
                    c_in: Vec::new(),
                    gates,
                    aux: hh,
                };
                (h2, vec![], cache)
            }
        }
    }

    /// Backward through one step. Accumulates parameter gradients and
    /// returns (dx, dh_in, dc_in); dc_in is empty for GRU.
    pub fn step_backward(
        &mut self,
        cache: &StepCache<F>,
        dh: &[F],
        dc: &[F],
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let k = self.hidden_size;
        match self.kind {
            CellKind::Lstm => {
                let (i_g, f_g, g_g, o_g) = (
                    &cache.gates[0..k],
                    &cache.gates[k..2 * k],
                    &cache.gates[2 * k..3 * k],
                    &cache.gates[3 * k..4 * k],
                );
                let tanh_c2 = &cache.aux;
                let mut da = vec![F::zero(); 4 * k];
                let mut dc_in = vec![F::zero(); k];
                for idx in 0..k {
                    let d_o = dh[idx] * tanh_c2[idx];
                    let mut d_c2 = dh[idx] * o_g[idx] * (F::one() - tanh_c2[idx] * tanh_c2[idx]);
                    if !dc.is_empty() {
                        d_c2 = d_c2 + dc[idx];
                    }
                    let d_f = d_c2 * cache.c_in[idx];
                    let d_i = d_c2 * g_g[idx];
                    let d_g = d_c2 * i_g[idx];
                    dc_in[idx] = d_c2 * f_g[idx];
                    da[idx] = d_i * i_g[idx] * (F::one() - i_g[idx]);
                    da[k + idx] = d_f * f_g[idx] * (F::one() - f_g[idx]);
                    da[2 * k + idx] = d_g * (F::one() - g_g[idx] * g_g[idx]);
                    da[3 * k + idx] = d_o * o_g[idx] * (F::one() - o_g[idx]);
                }
                let mut dx = vec![F::zero(); self.input_size];
                let mut dh_in = vec![F::zero(); k];
                tmatvec_acc(&self.w_x.value, &da, &mut dx);
                tmatvec_acc(&self.w_h.value, &da, &mut dh_in);
                outer_acc(&mut self.w_x.grad, &da, &cache.x);
                outer_acc(&mut self.w_h.grad, &da, &cache.h_in);
                for (b, d) in self.bias.grad.data_mut().iter_mut().zip(&da) {
                    *b = *b + *d;
                }
                (dx, dh_in, dc_in)
            }
            CellKind::Gru => {
                let (r_g, z_g, n_g) = (
                    &cache.gates[0..k],
                    &cache.gates[k..2 * k],
                    &cache.gates[2 * k..3 * k],
                );
                let hh = &cache.aux;
                // da_x drives W_x/bias rows; da_h drives W_h rows (candidate
                // row carries dhh instead of da_n).
                let mut da_x = vec![F::zero(); 3 * k];
                let mut da_h = vec![F::zero(); 3 * k];
                let mut dh_in = vec![F::zero(); k];
                for idx in 0..k {
                    let dz = dh[idx] * (cache.h_in[idx] - n_g[idx]);
                    let dn = dh[idx] * (F::one() - z_g[idx]);
                    dh_in[idx] = dh[idx] * z_g[idx];
                    let da_n = dn * (F::one() - n_g[idx] * n_g[idx]);
                    let dr = da_n * hh[idx];
                    let dhh = da_n * r_g[idx];
                    let da_z = dz * z_g[idx] * (F::one() - z_g[idx]);
                    let da_r = dr * r_g[idx] * (F::one() - r_g[idx]);
                    da_x[idx] = da_r;
                    da_x[k + idx] = da_z;
                    da_x[2 * k + idx] = da_n;
                    da_h[idx] = da_r;
                    da_h[k + idx] = da_z;
                    da_h[2 * k + idx] = dhh;
                }
                let mut dx = vec![F::zero(); self.input_size];
                tmatvec_acc(&self.w_x.value, &da_x, &mut dx);
                tmatvec_acc(&self.w_h.value, &da_h, &mut dh_in);
                outer_acc(&mut self.w_x.grad, &da_x, &cache.x);
                outer_acc(&mut self.w_h.grad, &da_h, &cache.h_in);
                for (b, d) in self.bias.grad.data_mut().iter_mut().zip(&da_x) {
                    *b = *b + *d;
                }
                (dx, dh_in, vec![])
            }
        }
    }

    /// Fresh zero state (h, c); c is empty for GRU.
    pub fn zero_state(&self) -> (Vec<F>, Vec<F>) {
        let h = vec![F::zero(); self.hidden_size];
        let c = match self.kind {
            CellKind::Lstm => vec![F::zero(); self.hidden_size],
            CellKind::Gru => Vec::new(),
        };
        (h, c)
    }
}

#[allow(unused)]
fn _keep(_: Tensor<f32>) {
    let _ = rf::<f32>(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell(kind: CellKind, input: usize, hidden: usize) -> RecurrentCell<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = RecurrentCell::new(kind, input, hidden, &mut rng);
        cell.w_x.value.fill(0.0);
        cell.w_h.value.fill(0.0);
        cell.bias.value.fill(0.0);
        cell
    }

    #[test]
    fn lstm_zero_everything() {
        let cell = zero_cell(CellKind::Lstm, 3, 4);
        let (h, c, _) = cell.step(&[0.0; 3], &[0.0; 4], &[0.0; 4]);
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_zero_params_halves_cell_state() {
        let cell = zero_cell(CellKind::Lstm, 2, 3);
        let cv = [0.4, -1.0, 2.0];
        let (h, c, _) = cell.step(&[0.0; 2], &[0.0; 3], &cv);
        for i in 0..3 {
            assert!((c[i] - 0.5 * cv[i]).abs() < 1e-12);
            assert!((h[i] - 0.5 * (0.5 * cv[i]).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_zero_params() {
        let cell = zero_cell(CellKind::Gru, 2, 3);
        let (h, _, _) = cell.step(&[0.0; 2], &[0.0; 3], &[]);
        assert!(h.iter().all(|&v| v == 0.0));

        let hv = [1.0, -0.5, 0.25];
        let (h, _, _) = cell.step(&[0.0; 2], &hv, &[]);
        for i in 0..3 {
            // update gate 0.5, candidate 0 -> h' = 0.5 * h
            assert!((h[i] - 0.5 * hv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell: RecurrentCell<f32> = RecurrentCell::new(CellKind::Lstm, 2, 3, &mut rng);
        let b = cell.bias.value.data();
        assert!(b[3..6].iter().all(|&v| v == 1.0));
        assert!(b[0..3].iter().all(|&v| v == 0.0));
    }
}
