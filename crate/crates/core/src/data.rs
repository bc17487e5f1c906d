use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tree::Design;

/// Covariates and partially observed responses. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Design,
    pub y: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Design, y: DMatrix<f64>) -> Result<Self> {
        let x_names = (0..x.n_vars()).map(|j| format!("X{}", j + 1)).collect();
        let y_names = (0..y.ncols()).map(|j| format!("Y{}", j + 1)).collect();
        Self::with_names(x, y, x_names, y_names)
    }

    pub fn with_names(
        x: Design,
        y: DMatrix<f64>,
        x_names: Vec<String>,
        y_names: Vec<String>,
    ) -> Result<Self> {
        if x.n_vars() > 0 && x.n_rows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} rows, Y has {}",
                x.n_rows(),
                y.nrows()
            )));
        }
        if x_names.len() != x.n_vars() || y_names.len() != y.ncols() {
            return Err(Error::Dimension("column names do not match data".into()));
        }
        if y.ncols() == 0 {
            return Err(Error::Data("at least one response column is required".into()));
        }
        if y.iter().any(|v| v.is_infinite()) {
            return Err(Error::Data("responses contain infinite values".into()));
        }
        let x = if x.n_vars() == 0 { Design::empty(y.nrows()) } else { x };
        Ok(Dataset {
            x,
            y,
            x_names,
            y_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.n_vars()
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> bool {
        !self.y[(i, j)].is_nan()
    }

    /// Indicator matrix: 1 where the response is observed.
    pub fn mask(&self) -> DMatrix<u8> {
        self.y.map(|v| u8::from(!v.is_nan()))
    }

    /// Missing cells in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in 0..self.p() {
                if !self.observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| (0..self.p()).all(|j| self.observed(i, j)))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: DMatrix::from_fn(rows.len(), self.p(), |i, j| self.y[(rows[i], j)]),
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
        }
    }

    /// Covariates with each missing cell replaced by its column's observed mean.
    pub fn mean_imputed_x(&self) -> Design {
        mean_impute(&self.x)
    }
}

pub fn mean_impute(x: &Design) -> Design {
    let cols = (0..x.n_vars())
        .map(|j| {
            let col = x.column(j);
            let obs: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            let mean = if obs.is_empty() {
                0.0
            } else {
                obs.iter().sum::<f64>() / obs.len() as f64
            };
            col.iter().map(|&v| if v.is_nan() { mean } else { v }).collect()
        })
        .collect();
    Design::from_columns(cols).expect("same shape as input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_and_missing_cells() {
        let x = Design::from_columns(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let y = DMatrix::from_row_slice(3, 2, &[1.0, f64::NAN, 2.0, 3.0, f64::NAN, f64::NAN]);
        let d = Dataset::new(x, y).unwrap();
        assert_eq!(d.missing_cells(), vec![(0, 1), (2, 0), (2, 1)]);
        assert_eq!(d.complete_rows(), vec![1]);
        assert_eq!(d.mask()[(0, 0)], 1);
        assert_eq!(d.mask()[(0, 1)], 0);
    }

    #[test]
    fn mean_imputation_fills_missing() {
        let x = Design::from_columns(vec![vec![1.0, f64::NAN, 3.0]]).unwrap();
        let imp = mean_impute(&x);
        assert_eq!(imp.column(0), &[1.0, 2.0, 3.0]);
    }
}
