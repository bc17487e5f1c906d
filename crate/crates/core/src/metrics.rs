//! Prediction and imputation accuracy metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which cells a metric is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Missing,
    Observed,
    Combined,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Missing, Split::Observed, Split::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Split::Missing => "missing",
            Split::Observed => "observed",
            Split::Combined => "combined",
        }
    }

    /// Cell selection given the observation indicator of the cell.
    pub fn selects(self, observed: bool) -> bool {
        match self {
            Split::Missing => !observed,
            Split::Observed => observed,
            Split::Combined => true,
        }
    }

    /// Boolean cell mask for this split.
    pub fn mask(self, observed: &DMatrix<bool>) -> DMatrix<bool> {
        observed.map(|o| self.selects(o))
    }
}

fn check_shapes(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<()> {
    if pred.shape() != truth.shape() || pred.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "metric shapes differ: {:?}, {:?}, {:?}",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// Per-column root mean squared error over masked cells. A column with no
/// masked cells is an error.
pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<Vec<f64>> {
    check_shapes(pred, truth, mask)?;
    (0..pred.ncols())
        .map(|j| {
            let (mut ss, mut n) = (0.0, 0usize);
            for i in 0..pred.nrows() {
                if mask[(i, j)] {
                    ss += (pred[(i, j)] - truth[(i, j)]).powi(2);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::EmptyMask(format!("rmse: no cells selected in column {j}")));
            }
            Ok((ss / n as f64).sqrt())
        })
        .collect()
}

/// Root of the summed squared error over masked cells.
pub fn frobenius(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<f64> {
    check_shapes(pred, truth, mask)?;
    let ss: f64 = pred
        .iter()
        .zip(truth.iter())
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).powi(2))
        .sum();
    Ok(ss.sqrt())
}

/// Sample CRPS of one cell: mean |s − y| − ½ mean |s − s'| over all ordered pairs.
pub fn crps_cell(samples: &[f64], truth: f64) -> f64 {
    let m = samples.len() as f64;
    let abs_err = samples.iter().map(|s| (s - truth).abs()).sum::<f64>() / m;
    // Σ_{a,b} |s_a − s_b| = 2 Σ_k (2k − m + 1) s_(k) over sorted samples
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // pair differences are shift invariant; centring keeps tied samples exact
    let lo = sorted[0];
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, s)| (2.0 * k as f64 - m + 1.0) * (s - lo))
        .sum::<f64>()
        * 2.0
        / (m * m);
    abs_err - 0.5 * pair
}

/// Per-column mean CRPS over masked cells. `samples[d]` is the d-th
/// predictive draw of the whole matrix.
pub fn crps_empirical(samples: &[DMatrix<f64>], truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::Data("crps needs at least two predictive samples".into()));
    }
    for s in samples {
        check_shapes(s, truth, mask)?;
    }
    let mut cell = vec![0.0; samples.len()];
    (0..truth.ncols())
        .map(|j| {
            let (mut total, mut n) = (0.0, 0usize);
            for i in 0..truth.nrows() {
                if !mask[(i, j)] {
                    continue;
                }
                for (c, s) in cell.iter_mut().zip(samples) {
                    *c = s[(i, j)];
                }
                total += crps_cell(&cell, truth[(i, j)]);
                n += 1;
            }
            if n == 0 {
                return Err(Error::EmptyMask(format!("crps: no cells selected in column {j}")));
            }
            Ok(total / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
}

impl Interval {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval at `level` from one parameter's draws.
pub fn equal_tailed(draws: &[f64], level: f64) -> Result<Interval> {
    if draws.is_empty() {
        return Err(Error::Data("interval of an empty draw set".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!("interval level {level} outside (0, 1)")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    Ok(Interval {
        lower: quantile_sorted(&sorted, a),
        upper: quantile_sorted(&sorted, 1.0 - a),
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
    })
}

/// Intervals for every parameter; each inner vector is one parameter's draws.
pub fn posterior_intervals(draws: &[Vec<f64>], level: f64) -> Result<Vec<Interval>> {
    if let Some(d) = draws.iter().find(|d| d.len() < 100) {
        return Err(Error::Data(format!("posterior intervals need at least 100 draws, got {}", d.len())));
    }
    draws.iter().map(|d| equal_tailed(d, level)).collect()
}
