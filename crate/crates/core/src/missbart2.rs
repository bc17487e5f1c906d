//! Joint sampler with a probit BART missingness model over covariates and
//! responses.

use nalgebra::DMatrix;
use rand::Rng;

use crate::chain::{ChainOutput, ModelKind, Recorder, RecorderSetup};
use crate::config::SamplerConfig;
use crate::data::Dataset;
use crate::data_model::{calibrate_priors, leaf_precision, DataModelPriors, DataModelState, ResponseScaler};
use crate::error::{Error, Result};
use crate::missbart1::PRED_STREAM_OFFSET;
use crate::stats::dist::{standard_normal, std_normal_above};
use crate::stats::{chain_rng, normal_cdf, sample_trunc_normal, Interval};
use crate::tree::{Design, ForestState, LeafModel, MhContext, MoveStats, NodeId, NodePriorParams, TreePrior};

/// Width of the latent scale the missingness leaf prior is calibrated to.
pub const LATENT_RANGE: f64 = 6.0;

/// Independent univariate truncated normal draws around the forest fit.
pub fn update_m_star_bart<R: Rng + ?Sized>(
    m_star: &mut DMatrix<f64>,
    m_hat: &DMatrix<f64>,
    observed: &DMatrix<bool>,
    rng: &mut R,
) {
    for i in 0..m_star.nrows() {
        for j in 0..m_star.ncols() {
            let interval = Interval::from_observed(observed[(i, j)]);
            m_star[(i, j)] = sample_trunc_normal(m_hat[(i, j)], 1.0, interval, rng);
        }
    }
}

/// Probit sum-of-trees model of the observation pattern with identity
/// latent covariance.
#[derive(Debug, Clone)]
pub struct ProbitForest {
    pub forest: ForestState,
    pub m_star: DMatrix<f64>,
    pub observed: DMatrix<bool>,
}

impl ProbitForest {
    pub fn new<R: Rng + ?Sized>(k_trees: usize, observed: DMatrix<bool>, rng: &mut R) -> Self {
        let (n, p) = observed.shape();
        let m_star = DMatrix::from_fn(n, p, |i, j| {
            let h = std_normal_above(0.0, rng);
            if observed[(i, j)] {
                h
            } else {
                -h
            }
        });
        ProbitForest {
            forest: ForestState::new(k_trees, n, p),
            m_star,
            observed,
        }
    }

    pub fn sweep_trees<R: Rng + ?Sized>(
        &mut self,
        design: &Design,
        tree_prior: &TreePrior,
        leaf: &LeafModel,
        rng: &mut R,
    ) -> MoveStats {
        let ctx = MhContext {
            design,
            prior: tree_prior,
            leaf,
            use_likelihood: true,
        };
        self.forest.sweep(&self.m_star, &ctx, rng)
    }

    pub fn update_latent<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        update_m_star_bart(&mut self.m_star, self.forest.fitted(), &self.observed, rng);
    }

    pub fn sign_conforms(&self) -> bool {
        self.m_star
            .iter()
            .zip(self.observed.iter())
            .all(|(&m, &o)| if o { m >= 0.0 } else { m <= 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct MissBart2Priors {
    pub data: DataModelPriors,
    pub miss_tree: TreePrior,
    pub miss_node: NodePriorParams,
}

/// Full sampler state on the scaled response axis.
#[derive(Debug, Clone)]
pub struct MissBart2State {
    /// Covariates, possibly with missing cells.
    pub x: Design,
    /// Responses with current imputations filled in.
    pub y: DMatrix<f64>,
    pub data: DataModelState,
    /// Covariates followed by the current responses.
    pub miss_design: Design,
    pub probit: ProbitForest,
}

impl MissBart2State {
    pub fn observed(&self) -> &DMatrix<bool> {
        &self.probit.observed
    }
}

pub struct MissBart2Sampler {
    pub state: MissBart2State,
    pub priors: MissBart2Priors,
    pub sigma_y: f64,
    /// When false the response proposals ignore the missingness model.
    pub miss_factor: bool,
    pub tree_moves: MoveStats,
    pub miss_tree_moves: MoveStats,
    pub y_proposed: u64,
    pub y_accepted: u64,
    miss_leaf: LeafModel,
    missing_cells: Vec<(usize, usize)>,
}

fn build_miss_design(x: &Design, y: &DMatrix<f64>) -> Design {
    let ycols = Design::from_columns((0..y.ncols()).map(|j| y.column(j).iter().copied().collect()).collect())
        .expect("response columns share a length");
    if x.n_vars() == 0 {
        return ycols;
    }
    x.hstack(&ycols).expect("row counts agree")
}

impl MissBart2Sampler {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        x: Design,
        y_scaled: &DMatrix<f64>,
        k_trees: usize,
        k_miss_trees: usize,
        priors: MissBart2Priors,
        sigma_y: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = y_scaled.nrows();
        if x.n_vars() > 0 && x.n_rows() != n {
            return Err(Error::Dimension("X and Y row counts differ".into()));
        }
        let observed = y_scaled.map(|v| !v.is_nan());
        let y = y_scaled.map(|v| if v.is_nan() { 0.0 } else { v });
        let data = DataModelState::initial(k_trees, n, &priors.data.omega)?;
        let probit = ProbitForest::new(k_miss_trees, observed, rng);
        let state = MissBart2State {
            miss_design: build_miss_design(&x, &y),
            x,
            y,
            data,
            probit,
        };
        Self::from_state(state, priors, sigma_y)
    }

    pub fn from_state(state: MissBart2State, priors: MissBart2Priors, sigma_y: f64) -> Result<Self> {
        let p = state.y.ncols();
        let miss_leaf = LeafModel::unit(p, &priors.miss_node)?;
        let observed = state.observed();
        let missing_cells = (0..observed.nrows())
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| !observed[(i, j)])
            .collect();
        Ok(MissBart2Sampler {
            state,
            priors,
            sigma_y,
            miss_factor: true,
            tree_moves: MoveStats::default(),
            miss_tree_moves: MoveStats::default(),
            y_proposed: 0,
            y_accepted: 0,
            miss_leaf,
            missing_cells,
        })
    }

    pub fn miss_leaf(&self) -> &LeafModel {
        &self.miss_leaf
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let s = &mut self.state;
        let moves = s.data.sweep_trees(&s.x, &s.y, &self.priors.data, rng)?;
        self.tree_moves.merge(&moves);
        let moves = s
            .probit
            .sweep_trees(&s.miss_design, &self.priors.miss_tree, &self.miss_leaf, rng);
        self.miss_tree_moves.merge(&moves);
        s.data.update_omega(&s.y, &self.priors.data, rng)?;
        s.probit.update_latent(rng);
        self.update_y_mis(rng);
        Ok(())
    }

    /// Log acceptance ratio for moving cell `(i, j)` to `proposal`, with the
    /// missingness-forest leaves the row would move to. `None` when the move
    /// would empty a missingness-tree leaf.
    pub fn y_log_ratio(
        &self,
        i: usize,
        j: usize,
        proposal: f64,
        counts: &[Vec<usize>],
    ) -> Option<(f64, Vec<NodeId>)> {
        let s = &self.state;
        let p = s.y.ncols();
        let omega = s.data.omega.matrix();
        let fitted = s.data.forest.fitted();
        let delta = proposal - s.y[(i, j)];
        let mut od = 0.0;
        for c in 0..p {
            od += omega[(j, c)] * (s.y[(i, c)] - fitted[(i, c)]);
        }
        let mut log_ratio = -0.5 * (2.0 * delta * od + delta * delta * omega[(j, j)]);
        let col = s.x.n_vars() + j;
        let leaves = if self.miss_factor {
            s.probit.forest.route_values(|v| {
                if v == col {
                    proposal
                } else {
                    s.miss_design.value(i, v)
                }
            })
        } else {
            (0..s.probit.forest.n_trees()).map(|k| s.probit.forest.leaf_of(k)[i]).collect()
        };
        if self.miss_factor {
            for (k, &l) in leaves.iter().enumerate() {
                let old = s.probit.forest.leaf_of(k)[i];
                if l != old && counts[k][old] == 1 {
                    return None;
                }
            }
            let m_new = s.probit.forest.sum_at(&leaves);
            let m_old = s.probit.forest.fitted();
            let ms = &s.probit.m_star;
            for c in 0..p {
                let a = ms[(i, c)] - m_new[c];
                let b = ms[(i, c)] - m_old[(i, c)];
                log_ratio += -0.5 * (a * a - b * b);
            }
        }
        Some((log_ratio, leaves))
    }

    /// One random-walk proposal per missing cell.
    pub fn update_y_mis<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.missing_cells.is_empty() {
            return;
        }
        let k = self.state.probit.forest.n_trees();
        let mut counts: Vec<Vec<usize>> = (0..k).map(|t| self.state.probit.forest.leaf_counts(t)).collect();
        let q = self.state.x.n_vars();
        for idx in 0..self.missing_cells.len() {
            let (i, j) = self.missing_cells[idx];
            let proposal = self.state.y[(i, j)] + self.sigma_y * standard_normal(rng);
            self.y_proposed += 1;
            let Some((log_ratio, leaves)) = self.y_log_ratio(i, j, proposal, &counts) else {
                continue;
            };
            if !(log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
                continue;
            }
            self.y_accepted += 1;
            let s = &mut self.state;
            s.y[(i, j)] = proposal;
            s.miss_design.set_value(i, q + j, proposal);
            if self.miss_factor {
                for (t, &l) in leaves.iter().enumerate() {
                    let old = s.probit.forest.leaf_of(t)[i];
                    counts[t][old] -= 1;
                    counts[t][l] += 1;
                }
                s.probit.forest.assign_row(i, &leaves);
            }
        }
        if !self.miss_factor {
            // keep the missingness forest consistent with the moved responses
            let s = &mut self.state;
            for &(i, _) in &self.missing_cells {
                let leaves = s.probit.forest.route_values(|v| s.miss_design.value(i, v));
                s.probit.forest.assign_row(i, &leaves);
            }
        }
    }
}

/// Posterior mean detection probabilities `Φ(M̂*)` over stored missingness forests.
pub fn detection_probability(m_hat_draws: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = m_hat_draws
        .first()
        .ok_or_else(|| Error::Data("no missingness draws".into()))?;
    let mut out = DMatrix::zeros(first.nrows(), first.ncols());
    for m in m_hat_draws {
        out += m.map(normal_cdf);
    }
    Ok(out / m_hat_draws.len() as f64)
}

/// Leaf prior for the missingness forest.
pub fn miss_node_prior(k_miss_trees: usize, rho_mu: f64, p: usize) -> NodePriorParams {
    NodePriorParams::centered(leaf_precision(k_miss_trees.max(1), rho_mu, LATENT_RANGE), p)
}

pub fn run_missbart2(
    data: &Dataset,
    cfg: &SamplerConfig,
    x_test: Option<&Design>,
    chain: u64,
) -> Result<ChainOutput> {
    cfg.validate()?;
    if let Some(t) = x_test {
        if t.n_vars() != data.q() {
            return Err(Error::Dimension("test covariates have the wrong width".into()));
        }
    }
    let scaler = ResponseScaler::fit(&data.y)?;
    let y_scaled = scaler.scale(&data.y);
    let (node, omega) = calibrate_priors(&y_scaled, &data.x, cfg.k_trees, &cfg.priors)?;
    let priors = MissBart2Priors {
        data: DataModelPriors {
            tree: cfg.tree_prior,
            node,
            omega,
        },
        miss_tree: cfg.miss_tree_prior,
        miss_node: miss_node_prior(cfg.k_miss_trees, cfg.priors.rho_mu, data.p()),
    };
    let mut rng = chain_rng(cfg.seed, chain);
    let mut pred_rng = chain_rng(cfg.seed, chain + PRED_STREAM_OFFSET);
    let mut sampler = MissBart2Sampler::new(
        data.x.clone(),
        &y_scaled,
        cfg.k_trees,
        cfg.k_miss_trees,
        priors,
        cfg.sigma_y_for(data.p()),
        &mut rng,
    )?;
    let mut rec = Recorder::new(RecorderSetup {
        model: ModelKind::MissBart2,
        config: cfg,
        x_names: &data.x_names,
        y_names: &data.y_names,
        n: data.n(),
        scaler: &scaler,
        missing_cells: data.missing_cells(),
        n_test: x_test.map_or(0, |t| t.n_rows()),
    });
    for it in 0..cfg.burn_in + cfg.n_draws {
        sampler.step(&mut rng)?;
        if it < cfg.burn_in || (it - cfg.burn_in + 1) % cfg.thin != 0 {
            continue;
        }
        let s = &sampler.state;
        let f = &s.data.forest;
        let test_fit = x_test.map(|t| f.predict(t));
        let mut draw = rec.record_data(f.trees(), f.fitted(), &s.y, &s.data.omega, test_fit.as_ref(), &mut pred_rng)?;
        rec.record_miss_forest(s.probit.forest.trees(), s.probit.forest.fitted(), &mut draw);
        rec.push(draw);
    }
    Ok(rec.finish(
        sampler.tree_moves,
        sampler.miss_tree_moves,
        (sampler.y_proposed, sampler.y_accepted),
    ))
}
