//! The multivariate sum-of-trees data model: response scaling, prior
//! calibration and the residual precision update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, sample_wishart, solve_lambda, SpdMatrix};
use crate::tree::{Design, ForestState, LeafModel, MhContext, MoveStats, NodePriorParams, TreePrior};

/// Per-column affine map of the observed range onto `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ResponseScaler {
    pub fn fit(y: &DMatrix<f64>) -> Result<Self> {
        let mut min = Vec::with_capacity(y.ncols());
        let mut max = Vec::with_capacity(y.ncols());
        for j in 0..y.ncols() {
            let obs: Vec<f64> = y.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
            if obs.len() < 2 {
                return Err(Error::Data(format!(
                    "response column {j} needs at least two observed values"
                )));
            }
            let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::Data(format!("response column {j} is constant")));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(ResponseScaler { min, max })
    }

    pub fn p(&self) -> usize {
        self.min.len()
    }

    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    #[inline]
    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        (v - self.min[j]) / self.range(j) - 0.5
    }

    #[inline]
    pub fn unscale_value(&self, j: usize, v: f64) -> f64 {
        (v + 0.5) * self.range(j) + self.min[j]
    }

    /// Scales every column; missing cells stay missing.
    pub fn scale(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| self.scale_value(j, y[(i, j)]))
    }

    pub fn unscale(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| self.unscale_value(j, y[(i, j)]))
    }

    /// Converts a residual precision on the scaled axis to original units.
    pub fn unscale_precision(&self, omega: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(omega.nrows(), omega.ncols(), |i, j| {
            omega[(i, j)] / (self.range(i) * self.range(j))
        })
    }
}

/// Calibration targets for the leaf and residual-precision priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    pub nu: f64,
    pub rho_tau: f64,
    pub rho_mu: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            nu: 3.0,
            rho_tau: 0.9,
            rho_mu: 0.95,
        }
    }
}

/// Wishart prior `Ω ~ W(nu, V)` with `V = diag(1 / (nu * lambda_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaPrior {
    pub nu: f64,
    pub rho_tau: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl OmegaPrior {
    pub fn from_lambda(nu: f64, lambda: Vec<f64>) -> Result<Self> {
        let p = lambda.len();
        if !(nu > p as f64 - 1.0) {
            return Err(Error::Domain(format!("nu = {nu} must exceed p - 1 = {}", p as f64 - 1.0)));
        }
        if lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Domain("lambda must be positive".into()));
        }
        Ok(OmegaPrior {
            nu,
            rho_tau: Vec::new(),
            tau_hat: Vec::new(),
            lambda,
        })
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    pub fn scale(&self) -> SpdMatrix {
        let d: Vec<f64> = self.lambda.iter().map(|l| 1.0 / (self.nu * l)).collect();
        SpdMatrix::from_diagonal(&d).expect("positive lambda")
    }

    pub fn scale_inverse(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.p(),
            self.lambda.iter().map(|l| self.nu * l),
        ))
    }
}

/// Leaf precision putting mass `rho_mu` of each sum-of-`k_trees` leaf prior on
/// an interval of width `range`.
pub fn leaf_precision(k_trees: usize, rho_mu: f64, range: f64) -> f64 {
    let k = normal_quantile(0.5 * (1.0 + rho_mu));
    4.0 * k_trees as f64 * k * k / (range * range)
}

/// Rough residual precision of `y` (with `NaN` for missing) given `x`:
/// least squares on the observed rows, or the sample precision when the
/// regression is degenerate.
pub fn estimate_tau_hat(y: &[f64], x: &Design) -> Result<f64> {
    let rows: Vec<usize> = (0..y.len()).filter(|&i| !y[i].is_nan()).collect();
    let n = rows.len();
    if n < 2 {
        return Err(Error::Data("need at least two observed responses".into()));
    }
    let yo: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let mean = yo.iter().sum::<f64>() / n as f64;
    let sample_var = yo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(sample_var > 0.0) {
        return Err(Error::Data("observed responses are constant".into()));
    }
    let fallback = 1.0 / sample_var;

    let x = crate::data::mean_impute(x);
    let vars: Vec<usize> = (0..x.n_vars())
        .filter(|&v| {
            let first = x.value(rows[0], v);
            rows.iter().any(|&i| x.value(i, v) != first)
        })
        .collect();
    let r = vars.len() + 1;
    if vars.is_empty() || n <= r {
        return Ok(fallback);
    }
    let design = DMatrix::from_fn(n, r, |i, c| if c == 0 { 1.0 } else { x.value(rows[i], vars[c - 1]) });
    let yv = DVector::from_vec(yo);
    let xtx = design.tr_mul(&design);
    let Some(chol) = xtx.cholesky() else {
        return Ok(fallback);
    };
    let beta = chol.solve(&design.tr_mul(&yv));
    let rss = (&yv - &design * beta).norm_squared();
    let var = rss / (n - r) as f64;
    if !(var > 1e-12 * sample_var) {
        return Ok(fallback);
    }
    Ok(1.0 / var)
}

/// Leaf prior and Wishart prior from scaled responses (with `NaN` for missing).
pub fn calibrate_priors(
    y_scaled: &DMatrix<f64>,
    x: &Design,
    k_trees: usize,
    settings: &PriorSettings,
) -> Result<(NodePriorParams, OmegaPrior)> {
    let p = y_scaled.ncols();
    let tau_mu = leaf_precision(k_trees.max(1), settings.rho_mu, 1.0);
    let mut tau_hat = Vec::with_capacity(p);
    let mut lambda = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = y_scaled.column(j).iter().copied().collect();
        let t = estimate_tau_hat(&col, x)?;
        lambda.push(solve_lambda(settings.nu, settings.rho_tau, t)?);
        tau_hat.push(t);
    }
    let mut prior = OmegaPrior::from_lambda(settings.nu, lambda)?;
    prior.rho_tau = vec![settings.rho_tau; p];
    prior.tau_hat = tau_hat;
    Ok((NodePriorParams::centered(tau_mu, p), prior))
}

/// Conjugate draw `Ω ~ W(n + nu, (Σ e eᵀ + V⁻¹)⁻¹)` from the residual matrix.
pub fn update_omega<R: Rng + ?Sized>(
    resid: &DMatrix<f64>,
    prior: &OmegaPrior,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let n = resid.nrows();
    let s = resid.tr_mul(resid) + prior.scale_inverse();
    let scale = SpdMatrix::symmetrized(s)?.inverse()?;
    sample_wishart(n as f64 + prior.nu, &scale, rng)
}

/// Priors of the sum-of-trees data model.
#[derive(Debug, Clone)]
pub struct DataModelPriors {
    pub tree: TreePrior,
    pub node: NodePriorParams,
    pub omega: OmegaPrior,
}

/// Forest and residual precision of the data model.
#[derive(Debug, Clone)]
pub struct DataModelState {
    pub forest: ForestState,
    pub omega: SpdMatrix,
}

impl DataModelState {
    /// Stump trees and Ω at `diag(1 / lambda)`.
    pub fn initial(k_trees: usize, n: usize, prior: &OmegaPrior) -> Result<Self> {
        let diag: Vec<f64> = prior.lambda.iter().map(|l| 1.0 / l).collect();
        Ok(DataModelState {
            forest: ForestState::new(k_trees, n, prior.p()),
            omega: SpdMatrix::from_diagonal(&diag)?,
        })
    }

    /// Backfitting pass over all trees against the completed responses `y`.
    pub fn sweep_trees<R: Rng + ?Sized>(
        &mut self,
        design: &Design,
        y: &DMatrix<f64>,
        priors: &DataModelPriors,
        rng: &mut R,
    ) -> Result<MoveStats> {
        let leaf = LeafModel::new(&self.omega, &priors.node)?;
        let ctx = MhContext {
            design,
            prior: &priors.tree,
            leaf: &leaf,
            use_likelihood: true,
        };
        Ok(self.forest.sweep(y, &ctx, rng))
    }

    pub fn update_omega<R: Rng + ?Sized>(
        &mut self,
        y: &DMatrix<f64>,
        priors: &DataModelPriors,
        rng: &mut R,
    ) -> Result<()> {
        let resid = y - self.forest.fitted();
        self.omega = update_omega(&resid, &priors.omega, rng)?;
        Ok(())
    }
}
