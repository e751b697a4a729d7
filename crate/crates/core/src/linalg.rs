//! Dense symmetric positive-definite kernel.
//!
//! Matrices here are small (the dimension of the observation space), so
//! everything is stored as a flat row-major `Vec<f64>` and factorized with
//! a plain Cholesky decomposition. Determinant comparisons elsewhere in the
//! crate go through [`SpdMatrix::log_det`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcError};

/// Relative pivot threshold for declaring a matrix singular: a Cholesky pivot
/// `p` is rejected when `p <= EPS_PD * trace / d`.
pub const EPS_PD: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-8;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// A symmetric `d x d` matrix. Symmetry holds bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries, averaging `(a_ij + a_ji) / 2`
    /// so that the stored matrix is exactly symmetric. Entries that disagree
    /// by more than a loose relative tolerance are rejected.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(TdcError::InvalidMatrix(format!(
                "expected {} entries for dimension {dim}, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TdcError::InvalidMatrix("non-finite entry".into()));
        }
        let scale = data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut m = Self { dim, data };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = m.data[i * dim + j];
                let b = m.data[j * dim + i];
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(TdcError::InvalidMatrix(format!(
                        "not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(TdcError::InvalidMatrix("matrix is not square".into()));
        }
        Self::from_row_major(dim, rows.iter().flatten().copied().collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += weight * y y^T`.
    pub fn add_outer(&mut self, y: &[f64], weight: f64) {
        debug_assert_eq!(y.len(), self.dim);
        let d = self.dim;
        for i in 0..d {
            let wi = weight * y[i];
            for j in 0..=i {
                self.data[i * d + j] += wi * y[j];
            }
        }
        for i in 0..d {
            for j in 0..i {
                self.data[j * d + i] = self.data[i * d + j];
            }
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `T A T^T` for a (not necessarily symmetric) row-major `d x d` matrix `T`.
    pub fn congruence(&self, t: &[f64]) -> SymMatrix {
        let d = self.dim;
        assert_eq!(t.len(), d * d);
        let mut ta = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let tik = t[i * d + k];
                for j in 0..d {
                    ta[i * d + j] += tik * self.data[k * d + j];
                }
            }
        }
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..d).map(|k| ta[i * d + k] * t[j * d + k]).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        SymMatrix { dim: d, data: out }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// A symmetric positive-definite matrix together with its lower Cholesky
/// factor. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: SymMatrix,
    /// Lower-triangular factor, row-major; upper part is zero.
    factor: Vec<f64>,
}

/// Cholesky-factorizes a symmetric matrix.
///
/// A pivot at or below `EPS_PD * trace(m) / d` yields
/// [`TdcError::NotPositiveDefinite`].
pub fn factorize(m: &SymMatrix) -> Result<SpdMatrix> {
    let d = m.dim;
    let threshold = EPS_PD * m.trace().abs() / d as f64;
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if !(pivot > threshold) {
            return Err(TdcError::NotPositiveDefinite {
                index: j,
                pivot,
                threshold,
            });
        }
        let ljj = pivot.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(SpdMatrix {
        matrix: m.clone(),
        factor: l,
    })
}

impl SpdMatrix {
    pub fn new(m: SymMatrix) -> Result<Self> {
        factorize(&m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        let d = self.dim();
        2.0 * (0..d).map(|i| self.factor[i * d + i].ln()).sum::<f64>()
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    /// Solves `L z = b` in place.
    #[inline]
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let row = &self.factor[i * d..i * d + i];
            let mut s = b[i];
            for (k, lik) in row.iter().enumerate() {
                s -= lik * b[k];
            }
            b[i] = s / self.factor[i * d + i];
        }
    }

    /// Solves `L^T z = b` in place.
    pub fn backward_substitute(&self, b: &mut [f64]) {
        let d = self.dim();
        for i in (0..d).rev() {
            let mut s = b[i];
            for k in (i + 1)..d {
                s -= self.factor[k * d + i] * b[k];
            }
            b[i] = s / self.factor[i * d + i];
        }
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let mut z = b.to_vec();
        self.forward_substitute(&mut z);
        self.backward_substitute(&mut z);
        Ok(z)
    }

    /// `y^T A^{-1} y`, consuming `y` as scratch space.
    #[inline]
    pub fn inverse_quad_in_place(&self, y: &mut [f64]) -> f64 {
        self.forward_substitute(y);
        y.iter().map(|v| v * v).sum()
    }

    pub fn inverse_quad(&self, y: &[f64]) -> Result<f64> {
        self.check_len(y.len())?;
        let mut z = y.to_vec();
        Ok(self.inverse_quad_in_place(&mut z))
    }

    /// Squared Mahalanobis distance `(x - m)^T A^{-1} (x - m)`.
    pub fn mahalanobis_sq(&self, x: &[f64], m: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        self.check_len(m.len())?;
        let mut diff: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
        Ok(self.inverse_quad_in_place(&mut diff))
    }

    /// `det(A + y y^T)` via `(1 + y^T A^{-1} y) det A`.
    pub fn det_rank_one_update(&self, y: &[f64]) -> Result<f64> {
        Ok(self.log_det_rank_one_update(y)?.exp())
    }

    pub fn log_det_rank_one_update(&self, y: &[f64]) -> Result<f64> {
        let q = self.inverse_quad(y)?;
        Ok(q.ln_1p() + self.log_det())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(TdcError::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// ascending order.
pub fn symmetric_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let d = m.dim;
    let mut a = m.data.clone();
    let frob = m.frobenius_norm();
    if frob == 0.0 {
        return vec![0.0; d];
    }
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= JACOBI_TOL * frob {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &SymMatrix) -> (f64, f64) {
    let eig = symmetric_eigenvalues(m);
    (eig[0], eig[eig.len() - 1])
}

/// Determinant of a general row-major square matrix by Gaussian elimination
/// with partial pivoting.
pub fn det_general(dim: usize, data: &[f64]) -> f64 {
    assert_eq!(data.len(), dim * dim);
    let mut a = data.to_vec();
    let mut det = 1.0;
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&i, &j| a[i * dim + col].abs().total_cmp(&a[j * dim + col].abs()))
            .unwrap();
        let pivot = a[pivot_row * dim + col];
        if pivot == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for k in 0..dim {
                a.swap(col * dim + k, pivot_row * dim + k);
            }
            det = -det;
        }
        det *= pivot;
        for i in (col + 1)..dim {
            let f = a[i * dim + col] / pivot;
            if f != 0.0 {
                for k in col..dim {
                    a[i * dim + k] -= f * a[col * dim + k];
                }
            }
        }
    }
    det
}
