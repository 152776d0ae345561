//! Dense row-major tensors and the vector/matrix kernels the recurrent
//! models are built from.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Scalar type used throughout the numerical core. Training runs in `f32`,
/// gradient checks in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: u8;
    const DTYPE_NAME: &'static str;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(src: &[u8]) -> Self;
    const BYTES: usize;
}

impl Real for f32 {
    const DTYPE: u8 = 0;
    const DTYPE_NAME: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f32::from_le_bytes(src[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: u8 = 1;
    const DTYPE_NAME: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f64::from_le_bytes(src[..8].try_into().unwrap())
    }
}

/// Shorthand for converting literals into the active scalar type.
#[inline]
pub fn rf<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("f64 convertible to scalar")
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-D tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-D tensor");
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
    pub fn init_uniform(&mut self, fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in &mut self.data {
            *v = rf(rng.gen_range(-bound..bound));
        }
    }

    pub fn assert_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value in {}",
            what
        );
    }

    pub fn map_to<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

#[inline]
pub fn debug_assert_all_finite<F: Real>(xs: &[F], what: &str) {
    debug_assert!(
        xs.iter().all(|v| v.is_finite()),
        "non-finite value in {}",
        what
    );
}

/// Dot product with 8-way accumulators so LLVM can vectorize the reduction.
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let pa = &a[i * 8..i * 8 + 8];
        let pb = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] = acc[j] + pa[j] * pb[j];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// y += alpha * x
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    assert_eq!(x.len(), y.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

pub fn scale_in_place<F: Real>(x: &mut [F], alpha: F) {
    for v in x {
        *v = *v * alpha;
    }
}

pub fn add_in_place<F: Real>(y: &mut [F], x: &[F]) {
    assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + *xi;
    }
}

/// y = W x  (W is rows x cols, x has cols entries)
pub fn matvec<F: Real>(w: &Tensor<F>, x: &[F], y: &mut [F]) {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), cols, "matvec input length");
    assert_eq!(y.len(), rows, "matvec output length");
    for r in 0..rows {
        y[r] = dot(&w.data[r * cols..(r + 1) * cols], x);
    }
}

/// y += W x
pub fn matvec_acc<F: Real>(w: &Tensor<F>, x: &[F], y: &mut [F]) {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), cols);
    assert_eq!(y.len(), rows);
    for r in 0..rows {
        y[r] = y[r] + dot(&w.data[r * cols..(r + 1) * cols], x);
    }
}

/// y += W^T x  (x has rows entries, y has cols entries)
pub fn tmatvec_acc<F: Real>(w: &Tensor<F>, x: &[F], y: &mut [F]) {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    assert_eq!(y.len(), cols);
    for r in 0..rows {
        axpy(x[r], &w.data[r * cols..(r + 1) * cols], y);
    }
}

/// G += dy x^T  (rank-1 gradient accumulation into a rows x cols tensor)
pub fn outer_acc<F: Real>(g: &mut Tensor<F>, dy: &[F], x: &[F]) {
    let (rows, cols) = (g.rows(), g.cols());
    assert_eq!(dy.len(), rows);
    assert_eq!(x.len(), cols);
    for r in 0..rows {
        axpy(dy[r], x, &mut g.data[r * cols..(r + 1) * cols]);
    }
}

pub fn l2_norm<F: Real>(x: &[F]) -> f64 {
    x.iter()
        .map(|v| {
            let f = v.to_f64().unwrap();
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn matvec_and_transpose() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [1.0, 0.0, -1.0];
        let mut y = [0.0; 2];
        matvec(&w, &x, &mut y);
        assert_eq!(y, [-2.0, -2.0]);

        let up = [1.0, 1.0];
        let mut back = [0.0; 3];
        tmatvec_acc(&w, &up, &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut g: Tensor<f32> = Tensor::zeros(&[2, 2]);
        outer_acc(&mut g, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(g.data(), &[3.0, 4.0, 6.0, 8.0]);
    }
}
