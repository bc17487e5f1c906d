use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-10;

/// Dense symmetric positive-definite matrix.
///
/// Construction verifies symmetry (relative to the largest entry) and that a
/// Cholesky factorization exists. Used for residual precisions, correlation
/// matrices and posterior covariances throughout the samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "SPD matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        cholesky_jitter(&m)?;
        Ok(SpdMatrix(m))
    }

    /// Wraps a matrix after averaging it with its transpose.
    pub fn symmetrized(m: DMatrix<f64>) -> Result<Self> {
        let sym = (&m + m.transpose()) * 0.5;
        Self::new(sym)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::NotPositiveDefinite(
                "diagonal entries must be positive".into(),
            ));
        }
        Ok(SpdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(
            diag,
        ))))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        cholesky_jitter(&self.0)
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        let inv = self.cholesky()?.inverse();
        SpdMatrix::symmetrized(inv)
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(log_det_from_cholesky(&self.cholesky()?))
    }

    /// Row-major flattening, used by chain persistence.
    pub fn to_row_major(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn from_row_major(p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * p {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {p}x{p} matrix, got {}",
                p * p,
                values.len()
            )));
        }
        SpdMatrix::new(DMatrix::from_row_slice(p, p, values))
    }
}

/// Cholesky factorization with one jitter retry of `1e-10 * trace / dim`.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let dim = m.nrows().max(1) as f64;
    let trace = m.trace();
    if !(trace > 0.0) {
        return Err(Error::NotPositiveDefinite("non-positive trace".into()));
    }
    let jitter = JITTER_SCALE * trace / dim;
    let mut bumped = m.clone();
    for i in 0..m.nrows() {
        bumped[(i, i)] += jitter;
    }
    bumped
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cholesky failed after jitter".into()))
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Computes `A * B * A^T` for symmetric `B`.
pub fn sandwich(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let out = a * b * a.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}
