//! Chain diagnostics and model interpretation over stored draws.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainOutput, ModelKind};
use crate::error::{Error, Result};
use crate::stats::{chain_rng, normal_cdf};
use crate::tree::{predict_trees, DecisionTree, Design};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean of an autocorrelated series by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let size = xs.len() / n_batches;
    assert!(size >= 1, "series shorter than batch count");
    let means: Vec<f64> = (0..n_batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    (variance(&means) / n_batches as f64).sqrt()
}

/// Two-sample z score comparing independent draws with a correlated chain.
pub fn geweke_z(independent: &[f64], chain: &[f64], n_batches: usize) -> f64 {
    let se2 = variance(independent) / independent.len() as f64 + batch_means_se(chain, n_batches).powi(2);
    (mean(independent) - mean(chain)) / se2.sqrt()
}

/// What a partial dependence request evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Pdp,
    Ice,
    DetectionPdp,
    DetectionIce,
}

impl CurveKind {
    pub fn is_detection(self) -> bool {
        matches!(self, CurveKind::DetectionPdp | CurveKind::DetectionIce)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpRequest {
    /// Column of the predictor matrix that is varied.
    pub var: usize,
    pub grid: Vec<f64>,
    pub response: usize,
    pub kind: CurveKind,
    pub ice_rows: usize,
    pub seed: u64,
}

impl PdpRequest {
    pub fn new(var: usize, grid: Vec<f64>, response: usize, kind: CurveKind) -> Self {
        PdpRequest {
            var,
            grid,
            response,
            kind,
            ice_rows: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub grid: Vec<f64>,
    /// Rows of the predictor matrix each ICE curve belongs to.
    pub rows: Vec<usize>,
    /// One curve per selected row.
    pub ice: Vec<Vec<f64>>,
    /// Mean of the ICE curves.
    pub pdp: Vec<f64>,
}

/// Evenly spaced grid over the observed range of a column.
pub fn range_grid(column: &[f64], points: usize) -> Vec<f64> {
    let obs = column.iter().copied().filter(|v| !v.is_nan());
    let (lo, hi) = obs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if points <= 1 || !(hi > lo) {
        return vec![lo; points.max(1)];
    }
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

/// ICE and PDP curves from sum-of-trees draws.
///
/// `forests` are per-draw tree sets on a scaled axis and `to_output` maps a
/// summed fit to the reported value (unscaling or a probit link).
pub fn ice_curves(
    forests: &[Vec<DecisionTree>],
    design: &Design,
    req: &PdpRequest,
    p: usize,
    to_output: impl Fn(f64) -> f64,
) -> Result<Curves> {
    if forests.is_empty() {
        return Err(Error::Data("no stored forests; rerun with forest_thin > 0".into()));
    }
    if req.var >= design.n_vars() || req.response >= p {
        return Err(Error::Usage("curve variable or response out of range".into()));
    }
    let n = design.n_rows();
    let mut rows: Vec<usize> = if req.ice_rows >= n {
        (0..n).collect()
    } else {
        let mut rng = chain_rng(req.seed, 0);
        sample(&mut rng, n, req.ice_rows).into_vec()
    };
    rows.sort_unstable();
    let base = design.select_rows(&rows);
    let mut ice = vec![vec![0.0; req.grid.len()]; rows.len()];
    for (g, &value) in req.grid.iter().enumerate() {
        let mut d = base.clone();
        for r in 0..rows.len() {
            d.set_value(r, req.var, value);
        }
        for trees in forests {
            let fit = predict_trees(trees, &d, p);
            for r in 0..rows.len() {
                ice[r][g] += to_output(fit[(r, req.response)]);
            }
        }
    }
    let k = forests.len() as f64;
    for curve in &mut ice {
        curve.iter_mut().for_each(|v| *v /= k);
    }
    let pdp = (0..req.grid.len())
        .map(|g| ice.iter().map(|c| c[g]).sum::<f64>() / ice.len() as f64)
        .collect();
    Ok(Curves {
        grid: req.grid.clone(),
        rows,
        ice,
        pdp,
    })
}

/// Curves for a fitted chain. Response curves use the data forests over `x`;
/// detection curves use the missingness forests over `(x, y)` with `y` the
/// training responses completed by their posterior mean imputations.
pub fn pdp_ice(chain: &ChainOutput, x: &Design, y: &DMatrix<f64>, req: &PdpRequest) -> Result<Curves> {
    chain.require_draws()?;
    if req.kind.is_detection() {
        if chain.model != ModelKind::MissBart2 {
            return Err(Error::Usage("detection curves need a missbart2 chain".into()));
        }
        let completed = chain.completed_y(y);
        let scaled = chain.scaler.scale(&completed);
        let ycols = Design::from_columns((0..chain.p).map(|j| scaled.column(j).iter().copied().collect()).collect())?;
        let design = if x.n_vars() == 0 { ycols } else { x.hstack(&ycols)? };
        let forests = ChainOutput::decode_forests(&chain.miss_forests)?;
        ice_curves(&forests, &design, req, chain.p, normal_cdf)
    } else {
        let forests = ChainOutput::decode_forests(&chain.forests)?;
        let j = req.response;
        let scaler = chain.scaler.clone();
        ice_curves(&forests, x, req, chain.p, move |v| scaler.unscale_value(j, v))
    }
}
