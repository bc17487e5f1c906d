//! Stored draws and summaries of one or more MCMC chains.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SamplerConfig;
use crate::data_model::ResponseScaler;
use crate::error::{Error, Result};
use crate::stats::dist::standard_normal;
use crate::stats::{normal_cdf, SpdMatrix};
use crate::tree::{forest_interaction_counts, forest_split_counts, DecisionTree, MoveStats, TreeRecord};

pub const CHAIN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    MissBart1,
    MissBart2,
    /// Complete-case multivariate BART.
    MvBart,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MissBart1 => "missbart1",
            ModelKind::MissBart2 => "missbart2",
            ModelKind::MvBart => "mvbart",
        }
    }
}

/// One stored iteration. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// Imputed responses in original units, aligned with `ChainOutput::missing_cells`.
    pub y_mis: Vec<f64>,
    /// Residual precision on the scaled response axis.
    pub omega: Vec<f64>,
    /// Missingness coefficients (r × p) on the scaled axis; empty unless missBART1.
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    pub psi: Vec<f64>,
    /// Data-forest split usage per covariate.
    pub split_counts: Vec<f64>,
    /// Missingness-forest split usage per predictor (covariates then responses).
    pub miss_split_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub format_version: u32,
    pub model: ModelKind,
    pub config: SamplerConfig,
    pub n_chains: usize,
    pub wall_time_secs: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub scaler: ResponseScaler,
    pub missing_cells: Vec<(usize, usize)>,
    pub draws: Vec<Draw>,
    /// Posterior mean of the data forest fit at training rows, original units.
    pub fitted_mean: Vec<f64>,
    /// Posterior mean of `Φ(M̂*)` at training rows; empty unless missBART2.
    pub detection_mean: Vec<f64>,
    pub n_test: usize,
    pub test_pred_mean: Vec<f64>,
    /// Posterior predictive draws at test rows, original units.
    pub test_pred_draws: Vec<Vec<f64>>,
    /// Data forests on the scaled axis, every `forest_thin`-th stored draw.
    pub forests: Vec<Vec<TreeRecord>>,
    pub miss_forests: Vec<Vec<TreeRecord>>,
    /// Mean consecutive-split pair counts, row-major.
    pub interactions: Vec<f64>,
    pub miss_interactions: Vec<f64>,
    pub tree_moves: MoveStats,
    pub miss_tree_moves: MoveStats,
    pub y_mis_proposed: u64,
    pub y_mis_accepted: u64,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn require_draws(&self) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::Data("chain holds no draws".into()));
        }
        Ok(())
    }

    pub fn y_mis_acceptance(&self) -> f64 {
        if self.y_mis_proposed == 0 {
            return f64::NAN;
        }
        self.y_mis_accepted as f64 / self.y_mis_proposed as f64
    }

    /// Number of rows of the missingness coefficient matrix.
    pub fn b_rows(&self) -> usize {
        1 + self.q + self.p
    }

    pub fn miss_predictor_names(&self) -> Vec<String> {
        self.x_names.iter().chain(&self.y_names).cloned().collect()
    }

    pub fn fitted_mean_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.fitted_mean)
    }

    pub fn test_pred_mean_matrix(&self) -> Option<DMatrix<f64>> {
        (self.n_test > 0).then(|| DMatrix::from_row_slice(self.n_test, self.p, &self.test_pred_mean))
    }

    /// Posterior mean of each imputed cell.
    pub fn imputation_means(&self) -> Vec<f64> {
        let m = self.missing_cells.len();
        let mut out = vec![0.0; m];
        for d in &self.draws {
            for (o, v) in out.iter_mut().zip(&d.y_mis) {
                *o += v;
            }
        }
        let k = self.draws.len().max(1) as f64;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }

    /// Training responses with missing cells replaced by their posterior mean imputation.
    pub fn completed_y(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = y.clone();
        for (&(i, j), v) in self.missing_cells.iter().zip(self.imputation_means()) {
            out[(i, j)] = v;
        }
        out
    }

    pub fn decode_forests(records: &[Vec<TreeRecord>]) -> Result<Vec<Vec<DecisionTree>>> {
        records
            .iter()
            .map(|f| f.iter().map(DecisionTree::from_record).collect())
            .collect()
    }
}

/// Combines chains run on the same data into one output. Draws are
/// concatenated in chain order; posterior means are averaged.
pub fn merge_chains(mut chains: Vec<ChainOutput>) -> Result<ChainOutput> {
    if chains.is_empty() {
        return Err(Error::Data("no chains to merge".into()));
    }
    if chains.len() == 1 {
        return Ok(chains.pop().unwrap());
    }
    let k = chains.len() as f64;
    let mut it = chains.into_iter();
    let mut out = it.next().unwrap();
    let avg = |acc: &mut Vec<f64>, other: &[f64]| {
        for (a, b) in acc.iter_mut().zip(other) {
            *a += b;
        }
    };
    for c in it {
        if c.n != out.n || c.p != out.p || c.model != out.model || c.missing_cells != out.missing_cells {
            return Err(Error::Data("chains disagree on data or model".into()));
        }
        out.draws.extend(c.draws);
        avg(&mut out.fitted_mean, &c.fitted_mean);
        avg(&mut out.detection_mean, &c.detection_mean);
        avg(&mut out.test_pred_mean, &c.test_pred_mean);
        avg(&mut out.interactions, &c.interactions);
        avg(&mut out.miss_interactions, &c.miss_interactions);
        out.test_pred_draws.extend(c.test_pred_draws);
        out.forests.extend(c.forests);
        out.miss_forests.extend(c.miss_forests);
        out.tree_moves.merge(&c.tree_moves);
        out.miss_tree_moves.merge(&c.miss_tree_moves);
        out.y_mis_proposed += c.y_mis_proposed;
        out.y_mis_accepted += c.y_mis_accepted;
        out.wall_time_secs += c.wall_time_secs;
        out.n_chains += c.n_chains;
    }
    for v in [
        &mut out.fitted_mean,
        &mut out.detection_mean,
        &mut out.test_pred_mean,
        &mut out.interactions,
        &mut out.miss_interactions,
    ] {
        v.iter_mut().for_each(|x| *x /= k);
    }
    Ok(out)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Accumulates stored draws and running summaries while a sampler runs.
pub(crate) struct Recorder {
    out: ChainOutput,
    fitted_sum: DMatrix<f64>,
    detection_sum: DMatrix<f64>,
    test_sum: DMatrix<f64>,
    inter_sum: DMatrix<f64>,
    miss_inter_sum: DMatrix<f64>,
    stored: usize,
    pred_stride: usize,
    start: std::time::Instant,
}

pub(crate) struct RecorderSetup<'a> {
    pub model: ModelKind,
    pub config: &'a SamplerConfig,
    pub x_names: &'a [String],
    pub y_names: &'a [String],
    pub n: usize,
    pub scaler: &'a ResponseScaler,
    pub missing_cells: Vec<(usize, usize)>,
    pub n_test: usize,
}

impl Recorder {
    pub fn new(s: RecorderSetup<'_>) -> Self {
        let p = s.y_names.len();
        let q = s.x_names.len();
        Recorder {
            out: ChainOutput {
                format_version: CHAIN_FORMAT_VERSION,
                model: s.model,
                config: s.config.clone(),
                n_chains: 1,
                wall_time_secs: 0.0,
                n: s.n,
                p,
                q,
                x_names: s.x_names.to_vec(),
                y_names: s.y_names.to_vec(),
                scaler: s.scaler.clone(),
                missing_cells: s.missing_cells,
                draws: Vec::new(),
                fitted_mean: Vec::new(),
                detection_mean: Vec::new(),
                n_test: s.n_test,
                test_pred_mean: Vec::new(),
                test_pred_draws: Vec::new(),
                forests: Vec::new(),
                miss_forests: Vec::new(),
                interactions: Vec::new(),
                miss_interactions: Vec::new(),
                tree_moves: MoveStats::default(),
                miss_tree_moves: MoveStats::default(),
                y_mis_proposed: 0,
                y_mis_accepted: 0,
            },
            fitted_sum: DMatrix::zeros(s.n, p),
            detection_sum: DMatrix::zeros(s.n, p),
            test_sum: DMatrix::zeros(s.n_test, p),
            inter_sum: DMatrix::zeros(q, q),
            miss_inter_sum: DMatrix::zeros(q + p, q + p),
            stored: 0,
            pred_stride: s.config.pred_stride(),
            start: std::time::Instant::now(),
        }
    }

    fn keep_forest(&self) -> bool {
        let ft = self.out.config.forest_thin;
        ft > 0 && self.stored % ft == 0
    }

    /// Imputed values in original units, in `missing_cells` order.
    pub fn y_mis_original(&self, y: &DMatrix<f64>) -> Vec<f64> {
        self.out
            .missing_cells
            .iter()
            .map(|&(i, j)| self.out.scaler.unscale_value(j, y[(i, j)]))
            .collect()
    }

    /// Stores one draw of the data model; `y` is the completed response on the scaled axis.
    pub fn record_data<R: Rng + ?Sized>(
        &mut self,
        trees: &[DecisionTree],
        fitted: &DMatrix<f64>,
        y: &DMatrix<f64>,
        omega: &SpdMatrix,
        test_fit: Option<&DMatrix<f64>>,
        rng: &mut R,
    ) -> Result<Draw> {
        let q = self.out.q;
        self.fitted_sum += fitted;
        self.inter_sum += forest_interaction_counts(trees, q);
        if let Some(tf) = test_fit {
            self.test_sum += tf;
            if self.stored % self.pred_stride == 0 {
                let cov = omega.inverse()?;
                let chol = cov.cholesky()?;
                let l = chol.l();
                let p = self.out.p;
                let mut draw = Vec::with_capacity(tf.len());
                for i in 0..tf.nrows() {
                    let z = DVector::from_fn(p, |_, _| standard_normal(rng));
                    let e = &l * z;
                    for j in 0..p {
                        draw.push(self.out.scaler.unscale_value(j, tf[(i, j)] + e[j]));
                    }
                }
                self.out.test_pred_draws.push(draw);
            }
        }
        if self.keep_forest() {
            self.out.forests.push(trees.iter().map(|t| t.to_record()).collect());
        }
        Ok(Draw {
            y_mis: self.y_mis_original(y),
            omega: omega.to_row_major(),
            b: Vec::new(),
            r: Vec::new(),
            psi: Vec::new(),
            split_counts: forest_split_counts(trees, q),
            miss_split_counts: Vec::new(),
        })
    }

    pub fn record_miss_forest(&mut self, trees: &[DecisionTree], m_hat: &DMatrix<f64>, draw: &mut Draw) {
        let nv = self.out.q + self.out.p;
        self.detection_sum += m_hat.map(normal_cdf);
        self.miss_inter_sum += forest_interaction_counts(trees, nv);
        draw.miss_split_counts = forest_split_counts(trees, nv);
        if self.keep_forest() {
            self.out.miss_forests.push(trees.iter().map(|t| t.to_record()).collect());
        }
    }

    pub fn push(&mut self, draw: Draw) {
        self.out.draws.push(draw);
        self.stored += 1;
    }

    pub fn finish(mut self, tree_moves: MoveStats, miss_tree_moves: MoveStats, y_mis: (u64, u64)) -> ChainOutput {
        let k = self.stored.max(1) as f64;
        let scaler = &self.out.scaler;
        let fitted = DMatrix::from_fn(self.fitted_sum.nrows(), self.fitted_sum.ncols(), |i, j| {
            scaler.unscale_value(j, self.fitted_sum[(i, j)] / k)
        });
        self.out.fitted_mean = row_major(&fitted);
        if self.out.model == ModelKind::MissBart2 {
            self.out.detection_mean = row_major(&(&self.detection_sum / k));
            self.out.miss_interactions = row_major(&(&self.miss_inter_sum / k));
        }
        if self.out.n_test > 0 {
            let t = DMatrix::from_fn(self.test_sum.nrows(), self.test_sum.ncols(), |i, j| {
                scaler.unscale_value(j, self.test_sum[(i, j)] / k)
            });
            self.out.test_pred_mean = row_major(&t);
        }
        self.out.interactions = row_major(&(&self.inter_sum / k));
        self.out.tree_moves = tree_moves;
        self.out.miss_tree_moves = miss_tree_moves;
        self.out.y_mis_proposed = y_mis.0;
        self.out.y_mis_accepted = y_mis.1;
        self.out.wall_time_secs = self.start.elapsed().as_secs_f64();
        self.out
    }
}
