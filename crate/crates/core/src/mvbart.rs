//! Complete-case multivariate BART, used as the comparison baseline.

use nalgebra::DMatrix;
use rand::Rng;

use crate::chain::{ChainOutput, ModelKind, Recorder, RecorderSetup};
use crate::config::SamplerConfig;
use crate::data::Dataset;
use crate::data_model::{calibrate_priors, DataModelPriors, DataModelState, ResponseScaler};
use crate::error::{Error, Result};
use crate::missbart1::PRED_STREAM_OFFSET;
use crate::stats::chain_rng;
use crate::tree::{Design, MoveStats};

/// Gibbs sampler for the data model alone on fully observed responses.
pub struct MvBartSampler {
    pub x: Design,
    pub y: DMatrix<f64>,
    pub state: DataModelState,
    pub priors: DataModelPriors,
    pub tree_moves: MoveStats,
}

impl MvBartSampler {
    pub fn new(x: Design, y: DMatrix<f64>, k_trees: usize, priors: DataModelPriors) -> Result<Self> {
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("complete-case model needs fully observed responses".into()));
        }
        let state = DataModelState::initial(k_trees, y.nrows(), &priors.omega)?;
        Ok(MvBartSampler {
            x,
            y,
            state,
            priors,
            tree_moves: MoveStats::default(),
        })
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let moves = self.state.sweep_trees(&self.x, &self.y, &self.priors, rng)?;
        self.tree_moves.merge(&moves);
        self.state.update_omega(&self.y, &self.priors, rng)
    }
}

/// Fits the data model to the rows of `data` whose responses are all observed.
pub fn run_mvbart(
    data: &Dataset,
    cfg: &SamplerConfig,
    x_test: Option<&Design>,
    chain: u64,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let cc = data.select_rows(&data.complete_rows());
    if cc.n() < 2 {
        return Err(Error::Data("fewer than two complete rows".into()));
    }
    let scaler = ResponseScaler::fit(&cc.y)?;
    let y = scaler.scale(&cc.y);
    let (node, omega) = calibrate_priors(&y, &cc.x, cfg.k_trees, &cfg.priors)?;
    let priors = DataModelPriors {
        tree: cfg.tree_prior,
        node,
        omega,
    };
    let mut rng = chain_rng(cfg.seed, chain);
    let mut pred_rng = chain_rng(cfg.seed, chain + PRED_STREAM_OFFSET);
    let mut sampler = MvBartSampler::new(cc.x.clone(), y, cfg.k_trees, priors)?;
    let mut rec = Recorder::new(RecorderSetup {
        model: ModelKind::MvBart,
        config: cfg,
        x_names: &data.x_names,
        y_names: &data.y_names,
        n: cc.n(),
        scaler: &scaler,
        missing_cells: Vec::new(),
        n_test: x_test.map_or(0, |t| t.n_rows()),
    });
    for it in 0..cfg.burn_in + cfg.n_draws {
        sampler.step(&mut rng)?;
        if it < cfg.burn_in || (it - cfg.burn_in + 1) % cfg.thin != 0 {
            continue;
        }
        let f = &sampler.state.forest;
        let test_fit = x_test.map(|t| f.predict(t));
        let draw = rec.record_data(
            f.trees(),
            f.fitted(),
            &sampler.y,
            &sampler.state.omega,
            test_fit.as_ref(),
            &mut pred_rng,
        )?;
        rec.push(draw);
    }
    Ok(rec.finish(sampler.tree_moves, MoveStats::default(), (0, 0)))
}
