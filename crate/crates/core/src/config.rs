use serde::{Deserialize, Serialize};

use crate::data_model::PriorSettings;
use crate::error::{Error, Result};
use crate::tree::TreePrior;

/// Gamma shape/rate pairs for the three precision groups of the coefficient prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiHyperPrior {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha_x: f64,
    pub beta_x: f64,
    pub alpha_y: f64,
    pub beta_y: f64,
}

impl PsiHyperPrior {
    pub fn defaults(p: usize, q: usize) -> Self {
        PsiHyperPrior {
            alpha0: 2.0,
            beta0: 1.0,
            alpha_x: 1.0 + q as f64,
            beta_x: 1.0,
            alpha_y: 1.0 + (p + q) as f64,
            beta_y: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha0,
            self.beta0,
            self.alpha_x,
            self.beta_x,
            self.alpha_y,
            self.beta_y,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("psi hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Settings shared by every sampler in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k_trees: usize,
    pub k_miss_trees: usize,
    pub burn_in: usize,
    pub n_draws: usize,
    pub thin: usize,
    /// Keep every `forest_thin`-th stored draw's forests (0 keeps none).
    pub forest_thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub trunc_sweeps: usize,
    /// Random-walk step for imputed responses; `0.5 / p` when unset.
    pub sigma_y: Option<f64>,
    pub tree_prior: TreePrior,
    pub miss_tree_prior: TreePrior,
    pub priors: PriorSettings,
    /// Coefficient hyperprior; dataset-dependent defaults when unset.
    pub psi: Option<PsiHyperPrior>,
    /// Cap on stored posterior predictive draws per test cell.
    pub max_pred_draws: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k_trees: 100,
            k_miss_trees: 20,
            burn_in: 5000,
            n_draws: 5000,
            thin: 1,
            forest_thin: 0,
            seed: 1,
            chains: 1,
            trunc_sweeps: 10,
            sigma_y: None,
            tree_prior: TreePrior::default(),
            miss_tree_prior: TreePrior::default(),
            priors: PriorSettings::default(),
            psi: None,
            max_pred_draws: 500,
        }
    }
}

pub fn default_sigma_y(p: usize) -> f64 {
    0.5 / p as f64
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in < 1 || self.n_draws < 1 {
            return Err(Error::Usage("burn-in and draw counts must be at least 1".into()));
        }
        if self.thin < 1 || self.chains < 1 || self.trunc_sweeps < 1 {
            return Err(Error::Usage("thin, chains and sweeps must be at least 1".into()));
        }
        if let Some(s) = self.sigma_y {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Usage("sigma_y must be positive".into()));
            }
        }
        let pr = &self.priors;
        if !(pr.nu > 0.0) || !(pr.rho_tau > 0.0 && pr.rho_tau < 1.0) || !(pr.rho_mu > 0.0 && pr.rho_mu < 1.0) {
            return Err(Error::Usage("need nu > 0 and rho values in (0, 1)".into()));
        }
        self.tree_prior.validate()?;
        self.miss_tree_prior.validate()?;
        if let Some(psi) = &self.psi {
            psi.validate()?;
        }
        Ok(())
    }

    pub fn sigma_y_for(&self, p: usize) -> f64 {
        self.sigma_y.unwrap_or_else(|| default_sigma_y(p))
    }

    /// Number of stored draws per chain.
    pub fn stored_draws(&self) -> usize {
        self.n_draws / self.thin
    }

    /// Thinning stride for stored predictive draws.
    pub fn pred_stride(&self) -> usize {
        let stored = self.stored_draws().max(1);
        stored.div_ceil(self.max_pred_draws.max(1))
    }
}
