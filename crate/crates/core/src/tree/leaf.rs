use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::dist::standard_normal;
use crate::stats::linalg::{log_det_from_cholesky, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent `N(mu0_j, 1/tau_mu)` prior on each leaf coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePriorParams {
    pub tau_mu: f64,
    pub mu0: Vec<f64>,
}

impl NodePriorParams {
    pub fn centered(tau_mu: f64, p: usize) -> Self {
        NodePriorParams {
            tau_mu,
            mu0: vec![0.0; p],
        }
    }
}

/// Exact log marginal likelihood of the residual rows of one leaf, with the
/// leaf vector integrated out against its normal prior.
pub fn node_log_marginal(
    residuals: &DMatrix<f64>,
    omega: &SpdMatrix,
    prior: &NodePriorParams,
) -> Result<f64> {
    let n = residuals.nrows();
    let p = omega.dim();
    if n == 0 {
        return Err(Error::Domain("node marginal needs at least one row".into()));
    }
    if residuals.ncols() != p || prior.mu0.len() != p {
        return Err(Error::Dimension("residual, omega and mu0 dims disagree".into()));
    }
    let om = omega.matrix();
    let tau = prior.tau_mu;
    let mu0 = DVector::from_column_slice(&prior.mu0);
    let s = residuals.row_sum().transpose();
    let post_prec = om * n as f64 + DMatrix::identity(p, p) * tau;
    let post = SpdMatrix::symmetrized(post_prec.clone())?;
    let chol = post.cholesky()?;
    let b = om * &s + &mu0 * tau;
    let mu_r = chol.solve(&b);
    let mut data_quad = 0.0;
    for i in 0..n {
        let r = residuals.row(i).transpose();
        data_quad += (r.transpose() * om * &r)[(0, 0)];
    }
    let ln_det_sigma_r = -log_det_from_cholesky(&chol);
    let quad = tau * mu0.dot(&mu0) - (mu_r.transpose() * &post_prec * &mu_r)[(0, 0)] + data_quad;
    Ok(-0.5 * (n * p) as f64 * LN_2PI + 0.5 * p as f64 * tau.ln()
        + 0.5 * n as f64 * omega.log_det()?
        + 0.5 * ln_det_sigma_r
        - 0.5 * quad)
}

/// Conjugate leaf model for a fixed residual precision, working in the
/// eigenbasis of Ω so each leaf costs O(p²) regardless of its size.
#[derive(Debug, Clone)]
pub struct LeafModel {
    tau: f64,
    mu0: DVector<f64>,
    evals: DVector<f64>,
    evecs: DMatrix<f64>,
    mu0_rot: DVector<f64>,
}

impl LeafModel {
    pub fn new(omega: &SpdMatrix, prior: &NodePriorParams) -> Result<Self> {
        let p = omega.dim();
        if prior.mu0.len() != p {
            return Err(Error::Dimension("mu0 length differs from omega".into()));
        }
        if !(prior.tau_mu > 0.0) {
            return Err(Error::Domain("tau_mu must be positive".into()));
        }
        let eig = SymmetricEigen::new(omega.matrix().clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::NotPositiveDefinite("omega eigenvalue <= 0".into()));
        }
        let mu0 = DVector::from_column_slice(&prior.mu0);
        let mu0_rot = eig.eigenvectors.transpose() * &mu0;
        Ok(LeafModel {
            tau: prior.tau_mu,
            mu0,
            evals: eig.eigenvalues,
            evecs: eig.eigenvectors,
            mu0_rot,
        })
    }

    /// Leaf model with Ω = I, used by the probit missingness forest.
    pub fn unit(p: usize, prior: &NodePriorParams) -> Result<Self> {
        Self::new(&SpdMatrix::identity(p), prior)
    }

    pub fn dim(&self) -> usize {
        self.evals.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Rotated linear term `Uᵀ(Ω s + τ mu0)`.
    fn rotated_b(&self, s: &[f64]) -> DVector<f64> {
        let s_rot = self.evecs.tr_mul(&DVector::from_column_slice(s));
        DVector::from_fn(self.dim(), |k, _| {
            self.evals[k] * s_rot[k] + self.tau * self.mu0_rot[k]
        })
    }

    /// Log marginal of a leaf with `n` rows and residual sum `s`, dropping the
    /// terms that are identical for every partition of the same rows.
    pub fn log_marginal(&self, n: usize, s: &[f64]) -> f64 {
        let b = self.rotated_b(s);
        let p = self.dim() as f64;
        let mut out = 0.5 * p * self.tau.ln() - 0.5 * self.tau * self.mu0.dot(&self.mu0);
        for k in 0..self.dim() {
            let prec = n as f64 * self.evals[k] + self.tau;
            out += -0.5 * prec.ln() + 0.5 * b[k] * b[k] / prec;
        }
        out
    }

    /// Posterior mean and covariance of the leaf vector.
    pub fn posterior(&self, n: usize, s: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let b = self.rotated_b(s);
        let p = self.dim();
        let mut mean_rot = DVector::zeros(p);
        let mut var_rot = DVector::zeros(p);
        for k in 0..p {
            let prec = n as f64 * self.evals[k] + self.tau;
            mean_rot[k] = b[k] / prec;
            var_rot[k] = 1.0 / prec;
        }
        let mean = &self.evecs * mean_rot;
        let cov = &self.evecs * DMatrix::from_diagonal(&var_rot) * self.evecs.transpose();
        (mean, cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, s: &[f64], rng: &mut R) -> DVector<f64> {
        let b = self.rotated_b(s);
        let p = self.dim();
        let draw_rot = DVector::from_fn(p, |k, _| {
            let prec = n as f64 * self.evals[k] + self.tau;
            b[k] / prec + standard_normal(rng) / prec.sqrt()
        });
        &self.evecs * draw_rot
    }

    /// Draw from the leaf prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let sd = 1.0 / self.tau.sqrt();
        DVector::from_fn(self.dim(), |j, _| self.mu0[j] + sd * standard_normal(rng))
    }
}
