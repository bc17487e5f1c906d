use crate::error::{Error, Result};

/// Column-major predictor matrix. `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl Design {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("design columns differ in length".into()));
        }
        if cols.iter().flatten().any(|v| v.is_infinite()) {
            return Err(Error::Data("design contains infinite values".into()));
        }
        Ok(Design { n, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Dimension("design rows differ in length".into()));
        }
        let cols = (0..q).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(cols)
    }

    /// A design with `n` rows and no predictors.
    pub fn empty(n: usize) -> Self {
        Design { n, cols: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.cols[var][row]
    }

    pub fn set_value(&mut self, row: usize, var: usize, v: f64) {
        self.cols[var][row] = v;
    }

    pub fn column(&self, var: usize) -> &[f64] {
        &self.cols[var]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[row]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.cols.iter().flatten().any(|v| v.is_nan())
    }

    /// Appends the columns of `other` (same row count).
    pub fn hstack(&self, other: &Design) -> Result<Design> {
        if self.n != other.n && !(self.cols.is_empty() || other.cols.is_empty()) {
            return Err(Error::Dimension("cannot stack designs with different rows".into()));
        }
        let mut cols = self.cols.clone();
        cols.extend(other.cols.iter().cloned());
        let n = if self.cols.is_empty() { other.n } else { self.n };
        Ok(Design { n, cols })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Design {
        Design {
            n: rows.len(),
            cols: self
                .cols
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// True when `var` takes at least two distinct observed values over `rows`.
    pub fn is_splittable(&self, rows: &[usize], var: usize) -> bool {
        let col = &self.cols[var];
        let mut first = None;
        for &i in rows {
            let v = col[i];
            if v.is_nan() {
                continue;
            }
            match first {
                None => first = Some(v),
                Some(f) if f != v => return true,
                _ => {}
            }
        }
        false
    }

    pub fn splittable_vars(&self, rows: &[usize]) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&v| self.is_splittable(rows, v))
            .collect()
    }

    /// Candidate cutpoints: distinct observed values over `rows`, largest excluded.
    pub fn cut_grid(&self, rows: &[usize], var: usize) -> Vec<f64> {
        let col = &self.cols[var];
        let mut vals: Vec<f64> = rows.iter().map(|&i| col[i]).filter(|v| !v.is_nan()).collect();
        vals.sort_unstable_by(f64::total_cmp);
        vals.dedup();
        vals.pop();
        vals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_excludes_max_and_missing() {
        let d = Design::from_columns(vec![vec![3.0, f64::NAN, 1.0, 3.0, 2.0]]).unwrap();
        let rows: Vec<usize> = (0..5).collect();
        assert_eq!(d.cut_grid(&rows, 0), vec![1.0, 2.0]);
        assert!(d.is_splittable(&rows, 0));
        assert!(!d.is_splittable(&[0, 1, 3], 0));
    }

    #[test]
    fn ragged_columns_rejected() {
        assert!(Design::from_columns(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
