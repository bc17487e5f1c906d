use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use super::linalg::{cholesky_jitter, SpdMatrix};
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
// Beyond this the survival function is handled in log space.
const TAIL_SWITCH: f64 = 30.0;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Asymptotic expansion of `ln P(Z > z)` for large positive `z`.
fn ln_sf_asymptotic(z: f64) -> f64 {
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - z.ln() - LN_SQRT_2PI + series.ln()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on (0, 1].
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Standard normal conditioned on `Z > a`, by inverse CDF.
pub fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let v = open_uniform(rng);
    if a < TAIL_SWITCH {
        let z = -normal_quantile(v * normal_sf(a));
        // roundoff can land a hair below the bound
        return z.max(a);
    }
    // Solve ln sf(z) = ln v + ln sf(a) by Newton from the Rayleigh approximation.
    let target = v.ln() + ln_sf_asymptotic(a);
    let mut z = (a * a - 2.0 * v.ln()).sqrt();
    for _ in 0..50 {
        let f = ln_sf_asymptotic(z) - target;
        // d/dz ln sf(z) ~ -(z + 1/z) to leading orders
        let step = f / (z + 1.0 / z);
        z += step;
        if step.abs() <= 1e-14 * z {
            break;
        }
    }
    z.max(a)
}

/// Admissible interval for one coordinate of a truncated draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Interval {
    /// `[0, ∞)`
    NonNegative,
    /// `(−∞, 0]`
    NonPositive,
}

impl Interval {
    pub fn from_observed(observed: bool) -> Self {
        if observed {
            Interval::NonNegative
        } else {
            Interval::NonPositive
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Interval::NonNegative => x >= 0.0,
            Interval::NonPositive => x <= 0.0,
        }
    }
}

/// Draws `N(mean, sd²)` restricted to `interval`.
pub fn sample_trunc_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    interval: Interval,
    rng: &mut R,
) -> f64 {
    match interval {
        Interval::NonNegative => {
            let z = std_normal_above(-mean / sd, rng);
            (mean + sd * z).max(0.0)
        }
        Interval::NonPositive => {
            let z = std_normal_above(mean / sd, rng);
            (mean - sd * z).min(0.0)
        }
    }
}

/// Per-coordinate sign constraints for a truncated multivariate normal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationBox(Vec<Interval>);

impl TruncationBox {
    pub fn new(intervals: Vec<Interval>) -> Self {
        TruncationBox(intervals)
    }

    pub fn from_mask(observed: &[bool]) -> Self {
        TruncationBox(observed.iter().map(|&o| Interval::from_observed(o)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && self.0.iter().zip(x).all(|(i, &v)| i.contains(v))
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let chol = cov.cholesky()?;
    let z = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    Ok(mean + chol.l() * z)
}

/// Draws from `N(P⁻¹ b, P⁻¹)` given precision `P` and linear term `b`.
///
/// Returns the draw together with the mean `P⁻¹ b`.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    b: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = cholesky_jitter(precision)?;
    let mean = chol.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| standard_normal(rng));
    // L^T x = z gives x ~ N(0, P^{-1})
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok((&mean + noise, mean))
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Domain(format!(
            "gamma needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Wishart draw by the Bartlett decomposition; `E[W] = dof * scale`.
pub fn sample_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &SpdMatrix,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let p = scale.dim();
    if !(dof > (p as f64) - 1.0) {
        return Err(Error::Domain(format!(
            "wishart dof {dof} must exceed dim - 1 = {}",
            p - 1
        )));
    }
    let l = scale.cholesky()?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        // chi-square with dof - i degrees of freedom
        let c = sample_gamma(0.5 * (dof - i as f64), 0.5, rng)?;
        a[(i, i)] = c.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let la = l * a;
    SpdMatrix::symmetrized(&la * la.transpose())
}

/// Inverse-Wishart draw with density ∝ |Σ|^{-(dof+p+1)/2} exp(-tr(scale Σ⁻¹)/2).
pub fn sample_inv_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &SpdMatrix,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let w = sample_wishart(dof, &scale.inverse()?, rng)?;
    w.inverse()
}

/// Truncated MVN by coordinate-wise Gibbs sweeps, starting from a marginal draw.
pub fn sample_trunc_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    bounds: &TruncationBox,
    rng: &mut R,
    sweeps: usize,
) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() || bounds.dim() != mean.len() {
        return Err(Error::Dimension(format!(
            "mean {}, cov {}, box {} disagree",
            mean.len(),
            cov.dim(),
            bounds.dim()
        )));
    }
    let cov_m = cov.matrix();
    let mut init = DVector::zeros(mean.len());
    for j in 0..mean.len() {
        init[j] = sample_trunc_normal(mean[j], cov_m[(j, j)].sqrt(), bounds.0[j], rng);
    }
    let precision = cov.inverse()?;
    sample_trunc_mvn_from(init, mean, precision.matrix(), bounds, rng, sweeps)
}

/// Coordinate-wise Gibbs sweeps from a feasible starting point, given the precision matrix.
pub fn sample_trunc_mvn_from<R: Rng + ?Sized>(
    mut x: DVector<f64>,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    bounds: &TruncationBox,
    rng: &mut R,
    sweeps: usize,
) -> Result<DVector<f64>> {
    let p = mean.len();
    if x.len() != p || precision.nrows() != p || bounds.dim() != p {
        return Err(Error::Dimension("truncated MVN inputs disagree".into()));
    }
    for j in 0..p {
        if !bounds.0[j].contains(x[j]) {
            x[j] = 0.0;
        }
    }
    for _ in 0..sweeps.max(1) {
        for j in 0..p {
            let pjj = precision[(j, j)];
            let mut shift = 0.0;
            for k in 0..p {
                if k != j {
                    shift += precision[(j, k)] * (x[k] - mean[k]);
                }
            }
            let cond_mean = mean[j] - shift / pjj;
            x[j] = sample_trunc_normal(cond_mean, 1.0 / pjj.sqrt(), bounds.0[j], rng);
        }
    }
    Ok(x)
}

/// Log density of `N(mean, Ω⁻¹)` at `x` given the precision `Ω` and its log determinant.
pub fn mvn_ln_pdf_precision(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    ln_det_precision: f64,
) -> f64 {
    let d = x - mean;
    let q = (d.transpose() * precision * &d)[(0, 0)];
    -(x.len() as f64) * LN_SQRT_2PI + 0.5 * ln_det_precision - 0.5 * q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chain_rng;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn cdf_and_quantile_agree() {
        assert!((normal_cdf(3.0) - 0.998_650_101_968_369_9).abs() < 1e-12);
        for &p in &[1e-12, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) / p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mvn_zero_cov_rejected() {
        assert!(SpdMatrix::new(DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn mvn_moments() {
        let mut rng = chain_rng(11, 0);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let n = 100_000;
        let draws: Vec<_> = (0..n)
            .map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap())
            .collect();
        let m = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n as f64;
        let mut c = DMatrix::<f64>::zeros(2, 2);
        for d in &draws {
            let e = d - &m;
            c += &e * e.transpose();
        }
        c /= (n - 1) as f64;
        assert!((m - mean).amax() < 0.02);
        assert!((c - cov.matrix()).amax() < 0.05);
    }

    #[test]
    fn mvn_reproducible() {
        let mean = DVector::zeros(2);
        let cov = SpdMatrix::identity(2);
        let a = sample_mvn(&mean, &cov, &mut chain_rng(5, 0)).unwrap();
        let b = sample_mvn(&mean, &cov, &mut chain_rng(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_form_matches_covariance_form() {
        let mut rng = chain_rng(3, 0);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let n = 50_000;
        let mut acc = DVector::zeros(2);
        let mut mean = DVector::zeros(2);
        for _ in 0..n {
            let (x, m) = sample_mvn_canonical(&b, &p, &mut rng).unwrap();
            acc += x;
            mean = m;
        }
        let expected = p.clone().try_inverse().unwrap() * &b;
        assert!((&mean - &expected).amax() < 1e-12);
        assert!((acc / n as f64 - expected).amax() < 0.02);
    }

    #[test]
    fn gamma_moments() {
        let mut rng = chain_rng(1, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_gamma(3.0, 1.0, &mut rng).unwrap())
            .collect();
        assert!((mean_var(&xs).0 / 3.0 - 1.0).abs() < 0.01);
        let ys: Vec<f64> = (0..100_000)
            .map(|_| sample_gamma(1.0, 2.0, &mut rng).unwrap())
            .collect();
        assert!((mean_var(&ys).1 / 0.25 - 1.0).abs() < 0.02);
        assert!(sample_gamma(1.0, 0.0, &mut rng).is_err());
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn wishart_univariate_is_gamma() {
        let mut rng = chain_rng(2, 0);
        let (nu, s) = (4.0, 0.7);
        let scale = SpdMatrix::from_diagonal(&[s]).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_wishart(nu, &scale, &mut rng).unwrap().matrix()[(0, 0)])
            .collect();
        assert!((mean_var(&xs).0 / (nu * s) - 1.0).abs() < 0.01);
    }

    #[test]
    fn wishart_mean_is_dof_times_scale() {
        let mut rng = chain_rng(4, 0);
        let scale = SpdMatrix::identity(2);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(3.0, &scale, &mut rng).unwrap().matrix();
        }
        acc /= n as f64;
        for i in 0..2 {
            assert!((acc[(i, i)] / 3.0 - 1.0).abs() < 0.02);
        }
        assert!(acc[(0, 1)].abs() < 0.06);
    }

    #[test]
    fn wishart_dof_domain() {
        let mut rng = chain_rng(0, 0);
        assert!(matches!(
            sample_wishart(1.5, &SpdMatrix::identity(3), &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sample_wishart(0.5, &SpdMatrix::identity(2), &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn inverse_wishart_mean() {
        // E[Σ] = scale / (dof - p - 1)
        let mut rng = chain_rng(9, 0);
        let scale = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let dof = 10.0;
        let n = 50_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inv_wishart(dof, &scale, &mut rng).unwrap().matrix();
        }
        acc /= n as f64;
        let expected = scale.matrix() / (dof - 3.0);
        assert!((acc - expected).amax() < 0.01);
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = chain_rng(7, 0);
        let mean = DVector::zeros(1);
        let cov = SpdMatrix::identity(1);
        let bounds = TruncationBox::new(vec![Interval::NonNegative]);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_trunc_mvn(&mean, &cov, &bounds, &mut rng, 10).unwrap()[0])
            .collect();
        assert!(xs.iter().all(|&x| x >= 0.0));
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_var(&xs).0 - target).abs() < 0.01);
    }

    #[test]
    fn independent_half_normals_uncorrelated() {
        let mut rng = chain_rng(8, 0);
        let mean = DVector::zeros(2);
        let cov = SpdMatrix::identity(2);
        let bounds = TruncationBox::new(vec![Interval::NonNegative, Interval::NonPositive]);
        let n = 100_000;
        let draws: Vec<_> = (0..n)
            .map(|_| sample_trunc_mvn(&mean, &cov, &bounds, &mut rng, 10).unwrap())
            .collect();
        assert!(draws.iter().all(|d| bounds.contains(d.as_slice())));
        let a: Vec<f64> = draws.iter().map(|d| d[0]).collect();
        let b: Vec<f64> = draws.iter().map(|d| d[1]).collect();
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov_ab = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
            / (n - 1) as f64;
        assert!((cov_ab / (va * vb).sqrt()).abs() < 0.02);
    }

    #[test]
    fn far_tail_draws_respect_bound() {
        let mut rng = chain_rng(10, 0);
        for &a in &[5.0, 29.9, 30.1, 40.0, 200.0] {
            for _ in 0..1000 {
                let z = std_normal_above(a, &mut rng);
                assert!(z >= a && z.is_finite());
                // exceedance is of order 1/a
                assert!(z - a < 30.0 / a);
            }
        }
    }

    #[test]
    fn asymptotic_tail_matches_exact_near_switch() {
        // mean excess over the bound is ~ 1/a for the exact tail
        let mut rng = chain_rng(12, 0);
        let a = 31.0;
        let xs: Vec<f64> = (0..50_000).map(|_| std_normal_above(a, &mut rng) - a).collect();
        let m = mean_var(&xs).0;
        let exact = (normal_ln_pdf(a) - ln_sf_asymptotic(a)).exp() - a;
        assert!((m / exact - 1.0).abs() < 0.02);
    }

    #[test]
    fn trunc_normal_handles_negative_side() {
        let mut rng = chain_rng(13, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_trunc_normal(1.0, 2.0, Interval::NonPositive, &mut rng))
            .collect();
        assert!(xs.iter().all(|&x| x <= 0.0));
        // E[X | X <= 0] = mu - sigma * phi(a) / Phi(a), a = -mu/sigma
        let a: f64 = -0.5;
        let expected = 1.0 - 2.0 * normal_ln_pdf(a).exp() / normal_cdf(a);
        assert!((mean_var(&xs).0 - expected).abs() < 0.01);
    }
}
