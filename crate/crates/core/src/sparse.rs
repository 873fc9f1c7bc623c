//! Compressed sparse row matrices and spectral radius estimation.

use crate::error::{check_dim, Error, Result};
use crate::rng::{seeded_rng, tags, RngSpec};

/// Default convergence tolerance for [`spectral_radius`].
pub const POWER_ITERATION_TOL: f64 = 1e-8;
/// Default iteration cap for [`spectral_radius`].
pub const POWER_ITERATION_MAX_ITER: usize = 1000;

/// Sparse real matrix in CSR layout.
///
/// Built from `(row, col, value)` triplets; entries are kept sorted
/// row-major with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidParameter {
                    name: "triplets",
                    reason: format!("duplicate entry ({}, {})", w[0].0, w[0].1),
                });
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidParameter {
                    name: "triplets",
                    reason: format!("entry ({r}, {c}) outside {rows}x{cols}"),
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "triplets",
                    reason: format!("non-finite value at ({r}, {c})"),
                });
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Sparse copy of a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Result<Self> {
        check_dim("SparseMatrix::from_dense", rows * cols, dense.len())?;
        let triplets = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i / cols, i % cols, *v))
            .collect();
        Self::from_triplets(rows, cols, triplets)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// Column indices and values of each row.
    pub fn row_slices(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        self.row_ptr
            .windows(2)
            .map(move |w| (&self.col_idx[w[0]..w[1]], &self.values[w[0]..w[1]]))
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    /// `y += A^T x`.
    pub fn matvec_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            out[r * self.cols + c] = v;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of a power-iteration spectral radius estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralRadius {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimates `|lambda_max|` of a square matrix by block power iteration.
///
/// A two-column orthonormal block is iterated so that a dominant complex
/// conjugate pair (the common case for random non-symmetric matrices) is
/// captured; the estimate is the largest modulus among the Ritz values of
/// the projected 2x2 matrix. Iteration stops once successive estimates differ
/// by less than `tol`. If `max_iter` is reached first, the last estimate is
/// returned with `converged == false`. An all-zero matrix yields radius 0.
pub fn spectral_radius(m: &SparseMatrix, tol: f64, max_iter: usize) -> Result<SpectralRadius> {
    if m.rows != m.cols {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iter",
            reason: "must be at least 1".into(),
        });
    }
    let n = m.rows;
    if n == 0 || m.nnz() == 0 || m.max_abs() == 0.0 {
        return Ok(SpectralRadius {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    if n == 1 {
        return Ok(SpectralRadius {
            value: m.values[0].abs(),
            iterations: 1,
            converged: true,
        });
    }

    let mut rng = seeded_rng(RngSpec::new(0x5EED)).substream(tags::POWER_ITERATION);
    let mut q1 = vec![0.0; n];
    let mut q2 = vec![0.0; n];
    rng.fill_normal(&mut q1);
    rng.fill_normal(&mut q2);
    orthonormalize(&mut q1, &mut q2);

    let mut z1 = vec![0.0; n];
    let mut z2 = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        m.matvec(&q1, &mut z1);
        m.matvec(&q2, &mut z2);
        let h11 = dot(&q1, &z1);
        let h12 = dot(&q1, &z2);
        let h21 = dot(&q2, &z1);
        let h22 = dot(&q2, &z2);
        estimate = max_eig_modulus_2x2(h11, h12, h21, h22);

        let residual = block_residual(&q1, &q2, &z1, &z2, [h11, h12, h21, h22]);
        if (estimate - prev).abs() < tol && residual < tol * estimate.max(1.0) {
            return Ok(SpectralRadius {
                value: estimate,
                iterations: it,
                converged: true,
            });
        }
        prev = estimate;

        std::mem::swap(&mut q1, &mut z1);
        std::mem::swap(&mut q2, &mut z2);
        if !orthonormalize(&mut q1, &mut q2) {
            // The block was annihilated: A is nilpotent on the iterated subspace.
            return Ok(SpectralRadius {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SpectralRadius {
        value: estimate,
        iterations: max_iter,
        converged: false,
    })
}

fn max_eig_modulus_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (half_tr + s).abs().max((half_tr - s).abs())
    } else {
        // complex pair: |lambda|^2 = det
        det.max(0.0).sqrt()
    }
}

/// Frobenius norm of `A Q - Q H` for the current block.
fn block_residual(q1: &[f64], q2: &[f64], z1: &[f64], z2: &[f64], h: [f64; 4]) -> f64 {
    let [h11, h12, h21, h22] = h;
    let mut acc = 0.0;
    for i in 0..q1.len() {
        let e1 = z1[i] - q1[i] * h11 - q2[i] * h21;
        let e2 = z2[i] - q1[i] * h12 - q2[i] * h22;
        acc += e1 * e1 + e2 * e2;
    }
    acc.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Modified Gram-Schmidt with reorthogonalisation. Columns that collapse
/// are zeroed, deflating the block, so nilpotent directions die out.
/// Returns false once both columns are gone.
fn orthonormalize(q1: &mut [f64], q2: &mut [f64]) -> bool {
    let n1 = norm(q1);
    let n2 = norm(q2);
    let scale = n1.max(n2);
    if !(scale > 0.0 && scale.is_finite()) {
        return false;
    }
    if n1 <= 1e-14 * scale {
        q1.copy_from_slice(q2);
        q2.iter_mut().for_each(|x| *x = 0.0);
    }
    let n1 = norm(q1);
    q1.iter_mut().for_each(|x| *x /= n1);
    let before = norm(q2);
    for _ in 0..2 {
        let p = dot(q1, q2);
        q2.iter_mut().zip(q1.iter()).for_each(|(b, a)| *b -= p * a);
    }
    let after = norm(q2);
    if after <= 1e-12 * before.max(scale) {
        q2.iter_mut().for_each(|x| *x = 0.0);
    } else {
        q2.iter_mut().for_each(|x| *x /= after);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn radius(m: &SparseMatrix) -> SpectralRadius {
        spectral_radius(m, POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER).unwrap()
    }

    #[test]
    fn diagonal_and_identity() {
        let d = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert!((radius(&d).value - 2.0).abs() < 1e-8);
        let eye = SparseMatrix::from_triplets(5, 5, (0..5).map(|i| (i, i, 1.0)).collect()).unwrap();
        let est = radius(&eye);
        assert!((est.value - 1.0).abs() < 1e-8);
        assert!(est.converged);
    }

    #[test]
    fn scaled_rotation_with_smaller_block() {
        let (rho, theta) = (0.7_f64, 0.9_f64);
        let t = vec![
            (0, 0, rho * theta.cos()),
            (0, 1, -rho * theta.sin()),
            (1, 0, rho * theta.sin()),
            (1, 1, rho * theta.cos()),
            (2, 2, 0.3),
            (3, 3, -0.2),
            (2, 0, 0.1),
        ];
        let m = SparseMatrix::from_triplets(4, 4, t).unwrap();
        assert!((radius(&m).value - rho).abs() < 1e-8);
    }

    #[test]
    fn zero_and_nilpotent() {
        assert_eq!(radius(&SparseMatrix::zeros(4, 4)).value, 0.0);
        let shift = SparseMatrix::from_triplets(3, 3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!(radius(&shift).value < 1e-6);
    }

    #[test]
    fn non_square_rejected() {
        let m = SparseMatrix::zeros(2, 3);
        assert!(matches!(spectral_radius(&m, 1e-8, 10), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn triplet_validation() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, f64::INFINITY)]).is_err());
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 3.0), (0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let t: Vec<_> = m.triplets().collect();
        assert_eq!(t, vec![(0, 1, 1.0), (1, 0, 2.0), (1, 2, 3.0)]);
    }

    #[test]
    fn transpose_product() {
        let mut rng = seeded_rng(RngSpec::new(4));
        let dense: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let m = SparseMatrix::from_dense(3, 4, &dense).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut y = vec![1.0; 4];
        m.matvec_transpose_add(&x, &mut y);
        for c in 0..4 {
            let expect = 1.0 + (0..3).map(|r| dense[r * 4 + c] * x[r]).sum::<f64>();
            assert!((y[c] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_dense_eigenvalues() {
        let mut rng = seeded_rng(RngSpec::new(21));
        for trial in 0..5 {
            let n = 50;
            let mut triplets = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if rng.uniform() < 0.1 {
                        triplets.push((i, j, rng.uniform_range(-1.0, 1.0)));
                    }
                }
            }
            let m = SparseMatrix::from_triplets(n, n, triplets).unwrap();
            let dense = nalgebra::DMatrix::from_row_slice(n, n, &m.to_dense());
            let exact = dense.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let est = radius(&m);
            assert!(
                (est.value - exact).abs() < 1e-6 * exact.max(1.0),
                "trial {trial}: {} vs {exact} ({} iterations)",
                est.value,
                est.iterations
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn diagonal_radius_is_max_abs(
            mut diag in proptest::collection::vec(-1.0f64..1.0, 2..30),
            pick in 0usize..30,
            sign in proptest::bool::ANY,
        ) {
            let k = pick % diag.len();
            let top = diag.iter().fold(0.0f64, |a, b| a.max(b.abs())) + 0.5;
            diag[k] = if sign { top } else { -top };
            let m = SparseMatrix::from_triplets(
                diag.len(),
                diag.len(),
                diag.iter().enumerate().map(|(i, v)| (i, i, *v)).collect(),
            ).unwrap();
            let est = radius(&m);
            proptest::prop_assert!((est.value - top).abs() < 1e-7);
        }

        #[test]
        fn sparse_matvec_matches_dense(
            entries in proptest::collection::vec(-2.0f64..2.0, 24),
            mask in proptest::collection::vec(proptest::bool::ANY, 24),
            x in proptest::collection::vec(-3.0f64..3.0, 6),
        ) {
            let dense: Vec<f64> = entries.iter().zip(&mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect();
            let m = SparseMatrix::from_dense(4, 6, &dense).unwrap();
            let mut y = vec![0.0; 4];
            m.matvec(&x, &mut y);
            for r in 0..4 {
                let expect: f64 = (0..6).map(|c| dense[r * 6 + c] * x[c]).sum();
                proptest::prop_assert!((y[r] - expect).abs() < 1e-12);
            }
        }
    }
}
