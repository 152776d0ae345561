//! Power-iteration helpers shared by the weighted bag-of-words encoder and
//! the 2-D projection export. All accumulation happens in f64.

/// Result of a power iteration.
#[derive(Debug, Clone)]
pub struct PowerIteration {
    /// Unit-norm dominant direction.
    pub vector: Vec<f64>,
    /// Rayleigh quotient (eigenvalue of the iterated matrix).
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Dominant eigenvector of a symmetric d x d matrix stored row-major.
pub fn dominant_eigenvector(g: &[f64], d: usize, max_iters: usize, tol: f64) -> PowerIteration {
    assert_eq!(g.len(), d * d);
    // Deterministic start: normalized alternating ramp, nudged so it is not
    // orthogonal to axis-aligned eigenvectors.
    let mut v: Vec<f64> = (0..d)
        .map(|i| 1.0 + 0.37 * ((i % 7) as f64) + if i % 2 == 0 { 0.11 } else { -0.05 })
        .collect();
    normalize(&mut v);

    let mut value = 0.0;
    for iter in 0..max_iters {
        let mut next = vec![0.0; d];
        for r in 0..d {
            let row = &g[r * d..(r + 1) * d];
            next[r] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = normalize(&mut next);
        value = norm;
        // |cos| close to 1 means the direction stopped moving.
        let cos: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        let delta = 1.0 - cos.abs();
        v = next;
        if delta < tol {
            return PowerIteration {
                vector: v,
                value,
                converged: true,
                iterations: iter + 1,
            };
        }
    }
    PowerIteration {
        vector: v,
        value,
        converged: false,
        iterations: max_iters,
    }
}

/// Gram matrix X^T X (d x d) of n row vectors of dimension d provided as an
/// iterator of slices.
pub fn gram_matrix<'a, I>(rows: I, d: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut g = vec![0.0f64; d * d];
    for row in rows {
        assert_eq!(row.len(), d);
        for i in 0..d {
            let xi = row[i] as f64;
            if xi == 0.0 {
                continue;
            }
            for j in 0..d {
                g[i * d + j] += xi * row[j] as f64;
            }
        }
    }
    g
}

/// Top `count` eigenpairs of a symmetric matrix by power iteration with
/// deflation. Returns (vectors, values, all_converged).
pub fn top_eigenvectors(
    g: &[f64],
    d: usize,
    count: usize,
    max_iters: usize,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<f64>, bool) {
    let mut work = g.to_vec();
    let mut vectors = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    let mut all_converged = true;
    for _ in 0..count.min(d) {
        let res = dominant_eigenvector(&work, d, max_iters, tol);
        all_converged &= res.converged;
        // Deflate: G -= lambda v v^T
        for i in 0..d {
            for j in 0..d {
                work[i * d + j] -= res.value * res.vector[i] * res.vector[j];
            }
        }
        values.push(res.value);
        vectors.push(res.vector);
    }
    (vectors, values, all_converged)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}
