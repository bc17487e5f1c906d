//! Simulated data, missingness mechanisms and cross-validation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ModelKind;
use crate::config::SamplerConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::fit;
use crate::metrics::{crps_empirical, frobenius, rmse, Split};
use crate::stats::dist::standard_normal;
use crate::stats::{chain_rng, normal_cdf, ChainRng, SpdMatrix};
use crate::tree::{
    predict_trees, sample_prior_leaves, sample_prior_tree, DecisionTree, Design, LeafModel, NodePriorParams, TreePrior,
};

pub const RECIPE_VERSION: u32 = 1;

const DATA_STREAM: u64 = 0;
const MISS_STREAM: u64 = 1;
const AMPUTE_STREAM: u64 = 2;
const STRUCTURE_STREAM: u64 = 3;
/// Rows of the reference replicate structure trees are grown over.
const REFERENCE_ROWS: usize = 1000;

/// Predictors a missingness mechanism may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    XOnly,
    YOnly,
    XAndY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataGenerator {
    /// Five uniform covariates and the univariate Friedman function.
    FriedmanUni {
        #[serde(default = "one")]
        noise_sd: f64,
    },
    /// Multivariate Friedman function with random coefficient vectors and
    /// `n_noise` extra uniform covariates.
    FriedmanMulti {
        p: usize,
        coef_sd: f64,
        #[serde(default)]
        coef_corr: f64,
        noise_sd: f64,
        #[serde(default)]
        noise_corr: f64,
        #[serde(default = "five")]
        n_noise: usize,
    },
    /// Sum of trees drawn from the tree prior over uniform covariates.
    BartDraw {
        q: usize,
        p: usize,
        trees: usize,
        leaf_sd: f64,
        noise_sd: f64,
        #[serde(default)]
        noise_corr: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn five() -> usize {
    5
}

impl DataGenerator {
    pub fn p(&self) -> usize {
        match *self {
            DataGenerator::FriedmanUni { .. } => 1,
            DataGenerator::FriedmanMulti { p, .. } | DataGenerator::BartDraw { p, .. } => p,
        }
    }

    pub fn q(&self) -> usize {
        match *self {
            DataGenerator::FriedmanUni { .. } => 5,
            DataGenerator::FriedmanMulti { n_noise, .. } => 5 + n_noise,
            DataGenerator::BartDraw { q, .. } => q,
        }
    }

    /// Covariates that can enter the response.
    pub fn n_informative(&self) -> usize {
        match *self {
            DataGenerator::FriedmanUni { .. } | DataGenerator::FriedmanMulti { .. } => 5,
            DataGenerator::BartDraw { q, .. } => q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Missingness {
    #[default]
    None,
    /// Multivariate probit regression on standardized predictors. `coef` has
    /// one row per predictor, intercept first, and one column per response.
    ProbitReg {
        target: Target,
        coef: Vec<Vec<f64>>,
        #[serde(default)]
        corr: f64,
    },
    /// Probit sum of prior-drawn trees over standardized predictors, each tree
    /// with at least one split.
    ProbitBart {
        target: Target,
        trees: usize,
        leaf_sd: f64,
        intercept: Vec<f64>,
    },
    /// Piecewise constant detection probability in one response; a cell is
    /// observed when its probability is at least 0.5.
    StepTree {
        #[serde(default)]
        response: usize,
        thresholds: Vec<f64>,
        leaf_probs: Vec<f64>,
    },
}

/// One covariate missingness pattern with its relative frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmputePattern {
    /// Columns blanked in rows given this pattern.
    pub missing: Vec<usize>,
    pub freq: f64,
    /// Weights of the score driving selection. Defaults to one for every
    /// column the pattern keeps and zero for the blanked ones.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmputeSpec {
    pub prop: f64,
    /// Empty means one pattern per column, each blanking only that column.
    #[serde(default)]
    pub patterns: Vec<AmputePattern>,
}

/// A versioned, seeded simulation definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRecipe {
    pub version: u32,
    pub name: String,
    /// Free-text annotation, e.g. the observed proportions the fixture targets.
    #[serde(default)]
    pub note: String,
    pub n: usize,
    pub seed: u64,
    pub data: DataGenerator,
    #[serde(default)]
    pub missingness: Missingness,
    #[serde(default)]
    pub ampute: Option<AmputeSpec>,
    /// Observed fraction per response the coefficients were tuned to.
    #[serde(default)]
    pub target_observed: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    4
}

impl SimRecipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: SimRecipe = toml::from_str(text).map_err(|e| Error::Usage(format!("recipe: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Usage(format!("recipe: {e}")))
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn q(&self) -> usize {
        self.data.q()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(format!("recipe {}: {m}", self.name)));
        if self.version != RECIPE_VERSION {
            return bad(format!("version {} unsupported, expected {RECIPE_VERSION}", self.version));
        }
        if self.n < 2 || self.folds < 2 {
            return bad("n and folds must be at least 2".into());
        }
        let (p, q) = (self.p(), self.q());
        if p == 0 {
            return bad("no responses".into());
        }
        if self.target_observed.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("observed proportions must lie in [0, 1]".into());
        }
        let width = |t: Target| match t {
            Target::XOnly => q,
            Target::YOnly => p,
            Target::XAndY => q + p,
        };
        match &self.missingness {
            Missingness::None => {}
            Missingness::ProbitReg { target, coef, corr } => {
                if coef.len() != 1 + width(*target) || coef.iter().any(|r| r.len() != p) {
                    return bad(format!("probit coefficients must be {} x {p}", 1 + width(*target)));
                }
                if p > 1 && !(corr.abs() < 1.0) {
                    return bad("latent correlation outside (-1, 1)".into());
                }
            }
            Missingness::ProbitBart { trees, leaf_sd, intercept, .. } => {
                if *trees == 0 || !(*leaf_sd > 0.0) || intercept.len() != p {
                    return bad("probit trees need trees > 0, leaf_sd > 0 and one intercept per response".into());
                }
            }
            Missingness::StepTree { response, thresholds, leaf_probs } => {
                if *response >= p || leaf_probs.len() != thresholds.len() + 1 {
                    return bad("step tree needs a valid response and one probability per interval".into());
                }
                if thresholds.windows(2).any(|w| w[0] > w[1]) {
                    return bad("step thresholds must be sorted".into());
                }
                if leaf_probs.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("step probabilities must lie in [0, 1]".into());
                }
            }
        }
        if let Some(a) = &self.ampute {
            if !(0.0..=1.0).contains(&a.prop) {
                return bad("ampute proportion outside [0, 1]".into());
            }
            for pat in &a.patterns {
                if pat.missing.iter().any(|&c| c >= q) || pat.freq < 0.0 {
                    return bad("ampute pattern out of range".into());
                }
            }
        }
        Ok(())
    }
}

/// Recipes shipped with the crate, by name.
pub const FIXTURES: [(&str, &str); 9] = [
    ("mar1", include_str!("../fixtures/mar1.toml")),
    ("mnar1", include_str!("../fixtures/mnar1.toml")),
    ("mar2", include_str!("../fixtures/mar2.toml")),
    ("mnar2", include_str!("../fixtures/mnar2.toml")),
    ("ushape", include_str!("../fixtures/ushape.toml")),
    ("nshape", include_str!("../fixtures/nshape.toml")),
    ("multi_amp0", include_str!("../fixtures/multi_amp0.toml")),
    ("multi_amp1", include_str!("../fixtures/multi_amp1.toml")),
    ("multi_amp2", include_str!("../fixtures/multi_amp2.toml")),
];

pub fn fixture(name: &str) -> Result<SimRecipe> {
    let (_, text) = FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Usage(format!("unknown fixture {name}")))?;
    SimRecipe::from_toml(text)
}

/// Complete data with the imposed missingness and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    /// Detection probability of every response cell.
    pub detection: DMatrix<f64>,
    /// Covariates after amputation, `NaN` marking removed cells.
    pub x_amputed: Option<DMatrix<f64>>,
}

fn design_of(m: &DMatrix<f64>) -> Design {
    Design::from_columns((0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect())
        .expect("finite matrix")
}

impl GeneratedDataset {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// Observed fraction of each response.
    pub fn observed_fraction(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.y.ncols())
            .map(|j| self.observed.column(j).iter().filter(|&&o| o).count() as f64 / n)
            .collect()
    }

    /// Covariates the models see.
    pub fn x_seen(&self) -> &DMatrix<f64> {
        self.x_amputed.as_ref().unwrap_or(&self.x)
    }

    /// What an analyst would receive: amputed covariates and `NaN` for every
    /// unobserved response.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let y = DMatrix::from_fn(self.y.nrows(), self.y.ncols(), |i, j| {
            if self.observed[(i, j)] {
                self.y[(i, j)]
            } else {
                f64::NAN
            }
        });
        Dataset::new(design_of(self.x_seen()), y)
    }

    pub fn select_rows(&self, rows: &[usize]) -> GeneratedDataset {
        GeneratedDataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            observed: self.observed.select_rows(rows),
            detection: self.detection.select_rows(rows),
            x_amputed: self.x_amputed.as_ref().map(|m| m.select_rows(rows)),
        }
    }
}

pub fn friedman_uni_value(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

fn uniform_matrix<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    // row-major fill so that rows are independent of q's later columns
    let mut x = DMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            x[(i, j)] = rng.random::<f64>();
        }
    }
    x
}

/// Rows of `N_p(0, cov)` noise.
pub fn mvn_rows<R: Rng + ?Sized>(n: usize, cov: &SpdMatrix, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = cov.dim();
    let l = cov.cholesky()?.l();
    let z = DMatrix::from_fn(p, n, |_, _| standard_normal(rng));
    Ok((l * z).transpose())
}

/// Covariance with common standard deviation `sd` and correlation `corr`.
pub fn equicorrelated(p: usize, sd: f64, corr: f64) -> Result<SpdMatrix> {
    let v = sd * sd;
    SpdMatrix::new(DMatrix::from_fn(p, p, |i, j| if i == j { v } else { v * corr }))
}

pub fn gen_friedman_uni<R: Rng + ?Sized>(n: usize, noise_sd: f64, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = uniform_matrix(n, 5, rng);
    let y = DMatrix::from_fn(n, 1, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        friedman_uni_value(&row)
    });
    let noise = DMatrix::from_fn(n, 1, |_, _| noise_sd * standard_normal(rng));
    (x, y + noise)
}

/// Noise-free multivariate Friedman mean with coefficient rows `xi` (4 × p).
pub fn friedman_multi_mean(x: &[f64], xi: &DMatrix<f64>) -> DVector<f64> {
    let basis = [(PI * x[0] * x[1]).sin(), (x[2] - 0.5).powi(2), x[3], x[4]];
    let mut out = DVector::zeros(xi.ncols());
    for (k, b) in basis.iter().enumerate() {
        out += xi.row(k).transpose() * *b;
    }
    out
}

/// Coefficient rows `ξ₁..ξ₄` (4 × p), each `N_p(0, coef_cov)`.
pub fn draw_friedman_coefficients<R: Rng + ?Sized>(coef_cov: &SpdMatrix, rng: &mut R) -> Result<DMatrix<f64>> {
    mvn_rows(4, coef_cov, rng)
}

/// Multivariate Friedman data for fixed coefficients `xi`; returns `(X, Y)`.
pub fn gen_friedman_multi<R: Rng + ?Sized>(
    n: usize,
    n_noise: usize,
    xi: &DMatrix<f64>,
    noise_cov: &SpdMatrix,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = uniform_matrix(n, 5 + n_noise, rng);
    let p = xi.ncols();
    let mut y = mvn_rows(n, noise_cov, rng)?;
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let m = friedman_multi_mean(&row, xi);
        for j in 0..p {
            y[(i, j)] += m[j];
        }
    }
    Ok((x, y))
}

/// A prior draw of `trees` trees over `design` with `N(0, leaf_sd²)` leaves.
/// Trees without any split are redrawn.
pub fn random_trees<R: Rng + ?Sized>(
    design: &Design,
    trees: usize,
    p: usize,
    leaf_sd: f64,
    rng: &mut R,
) -> Result<Vec<DecisionTree>> {
    let prior = TreePrior::default();
    let leaf = LeafModel::unit(p, &NodePriorParams::centered(1.0 / (leaf_sd * leaf_sd), p))?;
    let mut out = Vec::with_capacity(trees);
    while out.len() < trees {
        let mut t = sample_prior_tree(design, &prior, p, rng);
        if t.n_leaves() < 2 {
            continue;
        }
        sample_prior_leaves(&mut t, &leaf, rng);
        out.push(t);
    }
    Ok(out)
}

/// Sum-of-trees data over fresh uniform covariates; returns `(X, Y)`.
pub fn gen_bart_draw<R: Rng + ?Sized>(
    n: usize,
    q: usize,
    trees: &[DecisionTree],
    noise_cov: &SpdMatrix,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = uniform_matrix(n, q, rng);
    let mean = predict_trees(trees, &design_of(&x), noise_cov.dim());
    let y = mean + mvn_rows(n, noise_cov, rng)?;
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessDraw {
    pub observed: DMatrix<bool>,
    pub detection: DMatrix<f64>,
}

fn standardize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let col = m.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        out.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    out
}

/// Standardized columns of the predictors selected by `target`.
pub fn target_predictors(target: Target, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let m = match target {
        Target::XOnly => x.clone(),
        Target::YOnly => y.clone(),
        Target::XAndY => {
            let mut m = DMatrix::zeros(x.nrows(), x.ncols() + y.ncols());
            m.columns_mut(0, x.ncols()).copy_from(x);
            m.columns_mut(x.ncols(), y.ncols()).copy_from(y);
            m
        }
    };
    standardize(&m)
}

/// Latent `N_p(B_simᵀ z, R_sim)` thresholded at zero, `z = (1, predictors)`.
pub fn gen_missingness_probit<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    target: Target,
    b_sim: &DMatrix<f64>,
    r_sim: &SpdMatrix,
    rng: &mut R,
) -> Result<MissingnessDraw> {
    let pred = target_predictors(target, x, y);
    let n = y.nrows();
    if b_sim.nrows() != 1 + pred.ncols() || b_sim.ncols() != y.ncols() {
        return Err(Error::Dimension("probit coefficients do not match the predictors".into()));
    }
    let mut z = DMatrix::from_element(n, 1 + pred.ncols(), 1.0);
    z.columns_mut(1, pred.ncols()).copy_from(&pred);
    let mean = z * b_sim;
    let latent = &mean + mvn_rows(n, r_sim, rng)?;
    Ok(MissingnessDraw {
        observed: latent.map(|v| v > 0.0),
        detection: mean.map(|m| normal_cdf(m)),
    })
}

/// Probit forest missingness with independent unit-variance latents.
pub fn gen_missingness_probit_bart<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    target: Target,
    trees: &[DecisionTree],
    intercept: &[f64],
    rng: &mut R,
) -> Result<MissingnessDraw> {
    let pred = target_predictors(target, x, y);
    let p = y.ncols();
    let fit = predict_trees(trees, &design_of(&pred), p);
    let mean = DMatrix::from_fn(y.nrows(), p, |i, j| intercept[j] + fit[(i, j)]);
    let observed = mean.map(|m| m + standard_normal(rng) > 0.0);
    Ok(MissingnessDraw {
        observed,
        detection: mean.map(normal_cdf),
    })
}

/// Detection probability from the interval of `value` among `thresholds`;
/// intervals are closed on the right.
pub fn step_probability(value: f64, thresholds: &[f64], leaf_probs: &[f64]) -> f64 {
    let k = thresholds.iter().take_while(|&&t| value > t).count();
    leaf_probs[k]
}

/// Deterministic step-function missingness in response `response`; other
/// responses stay observed.
pub fn gen_missingness_step_tree(
    y: &DMatrix<f64>,
    response: usize,
    thresholds: &[f64],
    leaf_probs: &[f64],
) -> MissingnessDraw {
    let detection = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
        if j == response {
            step_probability(y[(i, j)], thresholds, leaf_probs)
        } else {
            1.0
        }
    });
    MissingnessDraw {
        observed: detection.map(|d| d >= 0.5),
        detection,
    }
}

/// The default pattern set: one pattern per column blanking only that column.
pub fn diagonal_patterns(q: usize) -> Vec<AmputePattern> {
    (0..q)
        .map(|j| AmputePattern {
            missing: vec![j],
            freq: 1.0,
            weights: None,
        })
        .collect()
}

/// Efraimidis–Spirakis weighted sampling of `k` distinct items.
fn weighted_sample<R: Rng + ?Sized>(items: &[usize], weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = items
        .iter()
        .zip(weights)
        .map(|(&i, &w)| (rng.random::<f64>().ln() / w.max(1e-300), i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// MAR amputation of complete covariates.
///
/// Rows are split into pattern groups in proportion to the pattern
/// frequencies. Within a group, `round(prop · size)` rows are blanked, drawn
/// without replacement with weight `Φ(score)` where the score is the
/// standardized weighted sum of the columns the pattern keeps.
pub fn ampute_mar<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    prop: f64,
    patterns: &[AmputePattern],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, q) = x.shape();
    if !(0.0..=1.0).contains(&prop) {
        return Err(Error::Usage("ampute proportion outside [0, 1]".into()));
    }
    if patterns.is_empty() {
        return Err(Error::Usage("no ampute patterns".into()));
    }
    for pat in patterns {
        let mut cols = pat.missing.clone();
        cols.sort_unstable();
        cols.dedup();
        if cols.len() >= q {
            return Err(Error::Usage("an ampute pattern may not blank every column".into()));
        }
        if cols.iter().any(|&c| c >= q) || pat.missing.is_empty() {
            return Err(Error::Usage("ampute pattern columns out of range".into()));
        }
        if pat.weights.as_ref().is_some_and(|w| w.len() != q) {
            return Err(Error::Usage("ampute weights need one entry per column".into()));
        }
    }
    let mut out = x.clone();
    if prop == 0.0 || n == 0 {
        return Ok(out);
    }
    let z = standardize(x);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let total: f64 = patterns.iter().map(|p| p.freq).sum();
    let mut start = 0;
    let mut acc = 0.0;
    for (g, pat) in patterns.iter().enumerate() {
        acc += pat.freq;
        let end = if g + 1 == patterns.len() {
            n
        } else {
            ((acc / total) * n as f64).round() as usize
        };
        let group = &order[start..end.max(start)];
        start = end.max(start);
        let weights: Vec<f64> = pat
            .weights
            .clone()
            .unwrap_or_else(|| (0..q).map(|c| if pat.missing.contains(&c) { 0.0 } else { 1.0 }).collect());
        let scores: Vec<f64> = group
            .iter()
            .map(|&i| (0..q).map(|c| weights[c] * z[(i, c)]).sum())
            .collect();
        let scores = if scores.len() > 1 {
            let col = DMatrix::from_column_slice(scores.len(), 1, &scores);
            standardize(&col).as_slice().to_vec()
        } else {
            scores
        };
        let probs: Vec<f64> = scores.iter().map(|&s| normal_cdf(s)).collect();
        let k = (prop * group.len() as f64).round() as usize;
        for i in weighted_sample(group, &probs, k, rng) {
            for &c in &pat.missing {
                out[(i, c)] = f64::NAN;
            }
        }
    }
    Ok(out)
}

/// Parts of a recipe fixed by its own seed: data trees, Friedman
/// coefficients and missingness trees. Replicates share them.
#[derive(Debug, Clone)]
pub struct Structure {
    pub data_trees: Vec<DecisionTree>,
    pub xi: Option<DMatrix<f64>>,
    pub miss_trees: Vec<DecisionTree>,
}

fn simulate_data(recipe: &SimRecipe, n: usize, s: &Structure, rng: &mut ChainRng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = recipe.p();
    match &recipe.data {
        DataGenerator::FriedmanUni { noise_sd } => Ok(gen_friedman_uni(n, *noise_sd, rng)),
        DataGenerator::FriedmanMulti {
            noise_sd,
            noise_corr,
            n_noise,
            ..
        } => {
            let nc = equicorrelated(p, *noise_sd, *noise_corr)?;
            let xi = s.xi.as_ref().expect("coefficients drawn with the structure");
            gen_friedman_multi(n, *n_noise, xi, &nc, rng)
        }
        DataGenerator::BartDraw {
            q,
            noise_sd,
            noise_corr,
            ..
        } => {
            let nc = equicorrelated(p, *noise_sd, *noise_corr)?;
            gen_bart_draw(n, *q, &s.data_trees, &nc, rng)
        }
    }
}

/// Draws the seed-fixed structure. Trees are grown over a reference
/// replicate so their cut points cover the data range.
pub fn draw_structure(recipe: &SimRecipe) -> Result<Structure> {
    recipe.validate()?;
    let p = recipe.p();
    let mut rng = chain_rng(recipe.seed, STRUCTURE_STREAM);
    let mut s = Structure {
        data_trees: Vec::new(),
        xi: None,
        miss_trees: Vec::new(),
    };
    match &recipe.data {
        DataGenerator::FriedmanUni { .. } => {}
        DataGenerator::FriedmanMulti { coef_sd, coef_corr, .. } => {
            s.xi = Some(draw_friedman_coefficients(&equicorrelated(p, *coef_sd, *coef_corr)?, &mut rng)?);
        }
        DataGenerator::BartDraw { q, trees, leaf_sd, .. } => {
            let x = uniform_matrix(REFERENCE_ROWS, *q, &mut rng);
            s.data_trees = random_trees(&design_of(&x), *trees, p, *leaf_sd, &mut rng)?;
        }
    }
    if let Missingness::ProbitBart { target, trees, leaf_sd, .. } = &recipe.missingness {
        let (x, y) = simulate_data(recipe, REFERENCE_ROWS, &s, &mut rng)?;
        let pred = target_predictors(*target, &x, &y);
        s.miss_trees = random_trees(&design_of(&pred), *trees, p, *leaf_sd, &mut rng)?;
    }
    Ok(s)
}

/// Builds the dataset described by `recipe` using its own seed.
pub fn generate(recipe: &SimRecipe) -> Result<GeneratedDataset> {
    generate_with_seed(recipe, recipe.seed)
}

/// A replicate of `recipe`: the structure comes from the recipe seed and
/// covariates, noise and missingness from `seed`.
pub fn generate_with_seed(recipe: &SimRecipe, seed: u64) -> Result<GeneratedDataset> {
    let structure = draw_structure(recipe)?;
    generate_replicate(recipe, &structure, seed)
}

pub fn generate_replicate(recipe: &SimRecipe, structure: &Structure, seed: u64) -> Result<GeneratedDataset> {
    let n = recipe.n;
    let p = recipe.p();
    let mut rng = chain_rng(seed, DATA_STREAM);
    let (x, y) = simulate_data(recipe, n, structure, &mut rng)?;
    let mut rng = chain_rng(seed, MISS_STREAM);
    let miss = match &recipe.missingness {
        Missingness::None => MissingnessDraw {
            observed: DMatrix::from_element(n, p, true),
            detection: DMatrix::from_element(n, p, 1.0),
        },
        Missingness::ProbitReg { target, coef, corr } => {
            let b = DMatrix::from_fn(coef.len(), p, |r, c| coef[r][c]);
            let r = equicorrelated(p, 1.0, *corr)?;
            gen_missingness_probit(&y, &x, *target, &b, &r, &mut rng)?
        }
        Missingness::ProbitBart { target, intercept, .. } => {
            gen_missingness_probit_bart(&y, &x, *target, &structure.miss_trees, intercept, &mut rng)?
        }
        Missingness::StepTree {
            response,
            thresholds,
            leaf_probs,
        } => gen_missingness_step_tree(&y, *response, thresholds, leaf_probs),
    };
    let x_amputed = match &recipe.ampute {
        None => None,
        Some(a) => {
            let mut rng = chain_rng(seed, AMPUTE_STREAM);
            let patterns = if a.patterns.is_empty() {
                diagonal_patterns(x.ncols())
            } else {
                a.patterns.clone()
            };
            Some(ampute_mar(&x, a.prop, &patterns, &mut rng)?)
        }
    };
    Ok(GeneratedDataset {
        x,
        y,
        observed: miss.observed,
        detection: miss.detection,
        x_amputed,
    })
}

/// Tunes the missingness intercepts of a probit recipe by bisection so that
/// the observed fraction of each response under the recipe's seed is as
/// close as possible to `target_observed`.
pub fn calibrate_intercepts(recipe: &SimRecipe) -> Result<SimRecipe> {
    let p = recipe.p();
    if recipe.target_observed.len() != p {
        return Err(Error::Usage("calibration needs one target proportion per response".into()));
    }
    let mut out = recipe.clone();
    let set = |r: &mut SimRecipe, j: usize, v: f64| match &mut r.missingness {
        Missingness::ProbitReg { coef, .. } => coef[0][j] = v,
        Missingness::ProbitBart { intercept, .. } => intercept[j] = v,
        _ => unreachable!(),
    };
    if !matches!(recipe.missingness, Missingness::ProbitReg { .. } | Missingness::ProbitBart { .. }) {
        return Err(Error::Usage("only probit recipes have intercepts to calibrate".into()));
    }
    for j in 0..p {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            set(&mut out, j, mid);
            let frac = generate(&out)?.observed_fraction()[j];
            if frac < recipe.target_observed[j] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        set(&mut out, j, (0.5 * (lo + hi) * 1e4).round() / 1e4);
    }
    Ok(out)
}

/// Random partition of `0..n` into `k` folds of near-equal size.
pub fn fold_assignment<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Usage(format!("cannot split {n} rows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Held-out predictions of one model on one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub model: ModelKind,
    pub rows: Vec<usize>,
    /// Posterior mean predictions, original units.
    pub pred: DMatrix<f64>,
    pub truth: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    pub detection: DMatrix<f64>,
    /// Predictive draws for CRPS.
    pub draws: Vec<DMatrix<f64>>,
}

impl FoldResult {
    /// Cells whose detection probability is at most `p_t`.
    pub fn detection_mask(&self, p_t: f64) -> DMatrix<bool> {
        self.detection.map(|d| d <= p_t)
    }
}

/// One metric value; `response` is `None` for aggregate metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub fold: usize,
    pub model: String,
    pub split: String,
    pub response: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// k-fold cross-validation of each model on a generated dataset.
pub fn run_cv(
    data: &GeneratedDataset,
    models: &[ModelKind],
    k_folds: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    let mut rng: ChainRng = chain_rng(seed, 0);
    let folds = fold_assignment(data.n(), k_folds, &mut rng)?;
    let mut out = Vec::new();
    for (f, test_rows) in folds.iter().enumerate() {
        let train_rows: Vec<usize> = (0..data.n()).filter(|i| test_rows.binary_search(i).is_err()).collect();
        let train = data.select_rows(&train_rows).to_dataset()?;
        let test = data.select_rows(test_rows);
        let x_test = design_of(test.x_seen());
        for &model in models {
            let chain = fit(model, &train, cfg, Some(&x_test))?;
            let pred = chain
                .test_pred_mean_matrix()
                .ok_or_else(|| Error::Numeric("model returned no test predictions".into()))?;
            let p = data.y.ncols();
            let draws = chain
                .test_pred_draws
                .iter()
                .map(|d| DMatrix::from_row_slice(test_rows.len(), p, d))
                .collect();
            out.push(FoldResult {
                fold: f,
                model,
                rows: test_rows.clone(),
                pred,
                truth: test.y.clone(),
                observed: test.observed.clone(),
                detection: test.detection.clone(),
                draws,
            });
        }
    }
    Ok(out)
}

/// RMSE, Frobenius norm and CRPS per split. Splits with no cells are skipped.
pub fn metric_rows(results: &[FoldResult]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for r in results {
        for split in Split::ALL {
            let mask = split.mask(&r.observed);
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let row = |response: Option<usize>, metric: &str, value: f64| MetricRow {
                fold: r.fold,
                model: r.model.name().to_string(),
                split: split.name().to_string(),
                response,
                metric: metric.to_string(),
                value,
            };
            rows.push(row(None, "frobenius", frobenius(&r.pred, &r.truth, &mask)?));
            let has_cells: Vec<bool> = (0..mask.ncols()).map(|j| mask.column(j).iter().any(|&m| m)).collect();
            let all = has_cells.iter().all(|&h| h);
            if all {
                for (j, v) in rmse(&r.pred, &r.truth, &mask)?.into_iter().enumerate() {
                    rows.push(row(Some(j), "rmse", v));
                }
                if r.draws.len() >= 2 {
                    for (j, v) in crps_empirical(&r.draws, &r.truth, &mask)?.into_iter().enumerate() {
                        rows.push(row(Some(j), "crps", v));
                    }
                }
            } else {
                for j in (0..mask.ncols()).filter(|&j| has_cells[j]) {
                    let single = DMatrix::from_fn(mask.nrows(), mask.ncols(), |i, c| c == j && mask[(i, c)]);
                    let v = frobenius(&r.pred, &r.truth, &single)? / (single.iter().filter(|&&m| m).count() as f64).sqrt();
                    rows.push(row(Some(j), "rmse", v));
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn friedman_hand_values() {
        assert_eq!(friedman_uni_value(&[0.0, 0.7, 0.5, 0.0, 0.0]), 0.0);
        assert!((friedman_uni_value(&[1.0, 0.5, 0.5, 1.0, 1.0]) - 25.0).abs() < 1e-12);
        let v = friedman_uni_value(&[0.5; 5]);
        assert!((v - (10.0 * (PI / 4.0).sin() + 7.5)).abs() < 1e-12);
        assert!((v - 14.5711).abs() < 1e-4);
    }

    #[test]
    fn multi_friedman_reduces_to_x4() {
        let mut xi = DMatrix::zeros(4, 3);
        xi.row_mut(2).fill(1.0);
        let m = friedman_multi_mean(&[0.3, 0.9, 0.1, 0.42, 0.8], &xi);
        assert!(m.iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn multi_friedman_zero_coefficients_is_noise() {
        let mut rng = chain_rng(3, 0);
        let zero = equicorrelated(2, 1e-12, 0.0).unwrap();
        let noise = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0])).unwrap();
        let xi = draw_friedman_coefficients(&zero, &mut rng).unwrap();
        let (_, y) = gen_friedman_multi(10_000, 5, &xi, &noise, &mut rng).unwrap();
        let c = y.transpose() * &y / 10_000.0;
        assert!((c[(0, 0)] - 1.0).abs() < 0.05 && (c[(1, 1)] - 2.0).abs() < 0.1 && (c[(0, 1)] - 0.5).abs() < 0.05);
    }

    #[test]
    fn zero_probit_observes_half() {
        let mut rng = chain_rng(5, 0);
        let y = DMatrix::from_fn(10_000, 2, |_, _| standard_normal(&mut rng));
        let x = DMatrix::zeros(10_000, 0);
        let b = DMatrix::zeros(3, 2);
        let m = gen_missingness_probit(&y, &x, Target::YOnly, &b, &SpdMatrix::identity(2), &mut rng).unwrap();
        for j in 0..2 {
            let frac = m.observed.column(j).iter().filter(|&&o| o).count() as f64 / 10_000.0;
            assert!((frac - 0.5).abs() < 0.015);
        }
        let mut b = DMatrix::zeros(3, 2);
        b.row_mut(0).fill(40.0);
        let m = gen_missingness_probit(&y, &x, Target::YOnly, &b, &SpdMatrix::identity(2), &mut rng).unwrap();
        assert!(m.observed.iter().all(|&o| o));
    }

    #[test]
    fn step_tree_u_shape_blanks_interior() {
        let y = DMatrix::from_column_slice(6, 1, &[5.0, 13.11, 13.2, 19.9, 20.66, 25.0]);
        let m = gen_missingness_step_tree(&y, 0, &[13.11, 19.83, 20.66], &[0.85, 0.15, 0.6, 0.9]);
        let obs: Vec<bool> = m.observed.iter().copied().collect();
        assert_eq!(obs, vec![true, true, false, true, true, true]);
        let all = gen_missingness_step_tree(&y, 0, &[10.0], &[1.0, 1.0]);
        assert!(all.observed.iter().all(|&o| o));
    }

    #[test]
    fn ampute_zero_prop_is_identity_and_full_blank_is_rejected() {
        let mut rng = chain_rng(1, 0);
        let x = uniform_matrix(50, 3, &mut rng);
        assert_eq!(ampute_mar(&x, 0.0, &diagonal_patterns(3), &mut rng).unwrap(), x);
        let all = AmputePattern {
            missing: vec![0, 1, 2],
            freq: 1.0,
            weights: None,
        };
        assert!(ampute_mar(&x, 0.5, &[all], &mut rng).is_err());
    }

    #[test]
    fn diagonal_ampute_spreads_evenly() {
        let mut rng = chain_rng(2, 0);
        let x = uniform_matrix(2000, 10, &mut rng);
        let a = ampute_mar(&x, 0.5, &diagonal_patterns(10), &mut rng).unwrap();
        for j in 0..10 {
            let frac = a.column(j).iter().filter(|v| v.is_nan()).count() as f64 / 2000.0;
            assert!((0.0435..=0.0565).contains(&frac), "column {j}: {frac}");
        }
        let rows = (0..2000).filter(|&i| a.row(i).iter().any(|v| v.is_nan())).count();
        assert_eq!(rows, 1000);
    }

    #[test]
    fn folds_partition_rows() {
        let mut rng = chain_rng(9, 0);
        let folds = fold_assignment(2000, 4, &mut rng).unwrap();
        assert!(folds.iter().all(|f| f.len() == 500));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..2000).collect::<Vec<_>>());
        assert!(fold_assignment(10, 1, &mut rng).is_err());
    }

    #[test]
    fn oracle_predictions_score_zero() {
        let truth = DMatrix::from_fn(10, 2, |i, j| (i * 3 + j) as f64);
        let observed = DMatrix::from_fn(10, 2, |i, j| (i + j) % 3 != 0);
        let r = FoldResult {
            fold: 0,
            model: ModelKind::MvBart,
            rows: (0..10).collect(),
            pred: truth.clone(),
            truth: truth.clone(),
            observed,
            detection: DMatrix::from_element(10, 2, 0.5),
            draws: vec![truth.clone(), truth.clone()],
        };
        let rows = metric_rows(&[r]).unwrap();
        assert!(rows.iter().all(|m| m.value == 0.0));
        assert_eq!(rows.iter().filter(|m| m.metric == "frobenius").count(), 3);
    }

    #[test]
    fn recipe_round_trips_through_toml() {
        let r = SimRecipe {
            version: RECIPE_VERSION,
            name: "t".into(),
            note: String::new(),
            n: 10,
            seed: 4,
            data: DataGenerator::BartDraw {
                q: 3,
                p: 2,
                trees: 2,
                leaf_sd: 0.5,
                noise_sd: 1.0,
                noise_corr: 0.2,
            },
            missingness: Missingness::ProbitReg {
                target: Target::YOnly,
                coef: vec![vec![0.1, 0.2], vec![1.0, 0.0], vec![0.0, 1.0]],
                corr: 0.0,
            },
            ampute: None,
            target_observed: vec![],
            folds: 2,
        };
        let back = SimRecipe::from_toml(&r.to_toml().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(generate(&r).unwrap(), generate(&back).unwrap());
    }
}
