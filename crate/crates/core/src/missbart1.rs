//! Joint sampler with a multivariate probit-regression missingness model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::chain::{ChainOutput, ModelKind, Recorder, RecorderSetup};
use crate::config::{PsiHyperPrior, SamplerConfig};
use crate::data::Dataset;
use crate::data_model::{calibrate_priors, update_omega, OmegaPrior, ResponseScaler};
use crate::error::{Error, Result};
use crate::stats::dist::std_normal_above;
use crate::stats::{
    chain_rng, cholesky_jitter, sample_gamma, sample_inv_wishart, sample_mvn_canonical,
    sample_trunc_mvn_from, ChainRng, SpdMatrix, TruncationBox,
};
use crate::tree::{Design, ForestState, LeafModel, MhContext, MoveStats, NodePriorParams, TreePrior};

/// Latent probit-regression block: coefficients, correlation, latent
/// responses and the three coefficient precisions `(τ_0, τ_X, τ_Y)`.
#[derive(Debug, Clone)]
pub struct ProbitRegState {
    pub b: DMatrix<f64>,
    pub r: SpdMatrix,
    pub m_star: DMatrix<f64>,
    pub psi: [f64; 3],
}

/// Diagonal of `Ψ⁻¹`: intercept, then `q` covariate rows, then `p` response rows.
pub fn psi_precision_vector(psi: [f64; 3], q: usize, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(1 + q + p);
    out.push(psi[0]);
    out.extend(std::iter::repeat_n(psi[1], q));
    out.extend(std::iter::repeat_n(psi[2], p));
    out
}

/// Rows `(1, X_i, Ỹ_i)`.
pub fn assemble_z(x: &Design, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = y.shape();
    let q = x.n_vars();
    DMatrix::from_fn(n, 1 + q + p, |i, c| {
        if c == 0 {
            1.0
        } else if c <= q {
            x.value(i, c - 1)
        } else {
            y[(i, c - 1 - q)]
        }
    })
}

/// Gibbs update of each latent row from its truncated normal `N(Bᵀ Z_i, R)`
/// restricted to the orthant implied by the observation pattern.
pub fn update_m_star<R: Rng + ?Sized>(
    m_star: &mut DMatrix<f64>,
    z: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &SpdMatrix,
    observed: &DMatrix<bool>,
    sweeps: usize,
    rng: &mut R,
) -> Result<()> {
    let mean = z * b;
    let prec = r.inverse()?.into_inner();
    let p = b.ncols();
    for i in 0..m_star.nrows() {
        let bounds = TruncationBox::from_mask(&(0..p).map(|j| observed[(i, j)]).collect::<Vec<_>>());
        let init = m_star.row(i).transpose();
        let mu = mean.row(i).transpose();
        let draw = sample_trunc_mvn_from(init, &mu, &prec, &bounds, rng, sweeps)?;
        m_star.set_row(i, &draw.transpose());
    }
    Ok(())
}

/// Joint full conditional `N(μ_Y, Σ_Y)` of one response row given the data
/// model fit and the latent missingness row.
pub fn y_full_conditional(
    omega: &SpdMatrix,
    b: &DMatrix<f64>,
    r: &SpdMatrix,
    yhat: &DVector<f64>,
    m_star: &DVector<f64>,
    z_fixed: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = omega.dim();
    let k = z_fixed.len();
    let r_inv = r.inverse()?.into_inner();
    let b_fixed = b.rows(0, k);
    let b_y = b.rows(k, p);
    let by_rinv = &b_y * &r_inv;
    let prec = omega.matrix() + &by_rinv * b_y.transpose();
    let h = omega.matrix() * yhat + &by_rinv * (m_star - b_fixed.transpose() * z_fixed);
    let sigma = SpdMatrix::symmetrized(prec)?.inverse()?.into_inner();
    let mu = &sigma * h;
    Ok((mu, sigma))
}

/// Draws every row's missing responses from their full conditional given the
/// row's observed responses.
#[allow(clippy::too_many_arguments)]
pub fn update_y_mis<R: Rng + ?Sized>(
    y: &mut DMatrix<f64>,
    yhat: &DMatrix<f64>,
    omega: &SpdMatrix,
    b: &DMatrix<f64>,
    r: &SpdMatrix,
    m_star: &DMatrix<f64>,
    z_fixed: &DMatrix<f64>,
    missing_rows: &[(usize, Vec<usize>)],
    rng: &mut R,
) -> Result<()> {
    if missing_rows.is_empty() {
        return Ok(());
    }
    let p = y.ncols();
    let k = z_fixed.ncols();
    let r_inv = r.inverse()?.into_inner();
    let b_fixed = b.rows(0, k).into_owned();
    let b_y = b.rows(k, p).into_owned();
    let by_rinv = &b_y * &r_inv;
    let prec = omega.matrix() + &by_rinv * b_y.transpose();
    for (i, mis) in missing_rows {
        let i = *i;
        let yhat_i = yhat.row(i).transpose();
        let lin = m_star.row(i).transpose() - b_fixed.transpose() * z_fixed.row(i).transpose();
        let h = omega.matrix() * yhat_i + &by_rinv * lin;
        let m = mis.len();
        let mut lin_m = DVector::zeros(m);
        let mut prec_mm = DMatrix::zeros(m, m);
        for (a, &ja) in mis.iter().enumerate() {
            let mut v = h[ja];
            for jo in 0..p {
                if !mis.contains(&jo) {
                    v -= prec[(ja, jo)] * y[(i, jo)];
                }
            }
            lin_m[a] = v;
            for (c, &jc) in mis.iter().enumerate() {
                prec_mm[(a, c)] = prec[(ja, jc)];
            }
        }
        let (draw, _) = sample_mvn_canonical(&lin_m, &prec_mm, rng)?;
        for (a, &ja) in mis.iter().enumerate() {
            y[(i, ja)] = draw[a];
        }
    }
    Ok(())
}

/// Parameter-expanded update of `(B, R)`: working scales are drawn from their
/// prior given `R`, the expanded coefficients and covariance from their
/// conjugate posterior, and everything is mapped back to the unit-diagonal
/// scale. `m_star` is rescaled in place along with them.
pub fn update_b_r<R: Rng + ?Sized>(
    m_star: &mut DMatrix<f64>,
    z: &DMatrix<f64>,
    r: &SpdMatrix,
    psi_prec: &[f64],
    rng: &mut R,
) -> Result<(DMatrix<f64>, SpdMatrix)> {
    let p = r.dim();
    let n = m_star.nrows();
    let k = z.ncols();
    if psi_prec.len() != k || m_star.ncols() != p || z.nrows() != n {
        return Err(Error::Dimension("probit update inputs disagree".into()));
    }
    let r_inv = r.inverse()?.into_inner();
    let mut d = vec![0.0; p];
    for j in 0..p {
        let g = sample_gamma(0.5 * (p as f64 + 1.0), 0.5 * r_inv[(j, j)], rng)?;
        d[j] = (1.0 / g).sqrt();
    }
    let mut w = m_star.clone();
    for j in 0..p {
        w.column_mut(j).scale_mut(d[j]);
    }
    let mut a = z.tr_mul(z);
    for c in 0..k {
        a[(c, c)] += psi_prec[c];
    }
    let chol_a = cholesky_jitter(&a)?;
    let ztw = z.tr_mul(&w);
    let b_hat = chol_a.solve(&ztw);
    let s = DMatrix::identity(p, p) + w.tr_mul(&w) - ztw.tr_mul(&b_hat);
    let sigma = sample_inv_wishart((p + 1 + n) as f64, &SpdMatrix::symmetrized(s)?, rng)?;
    let e = DMatrix::from_fn(k, p, |_, _| crate::stats::dist::standard_normal(rng));
    let left = chol_a
        .l()
        .transpose()
        .solve_upper_triangular(&e)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let c_sigma = sigma.cholesky()?.l();
    let beta = b_hat + left * c_sigma.transpose();

    let scale: Vec<f64> = (0..p).map(|j| sigma.matrix()[(j, j)].sqrt()).collect();
    let mut r_new = DMatrix::from_fn(p, p, |i, j| sigma.matrix()[(i, j)] / (scale[i] * scale[j]));
    for j in 0..p {
        r_new[(j, j)] = 1.0;
    }
    let mut b_new = beta;
    for j in 0..p {
        b_new.column_mut(j).scale_mut(1.0 / scale[j]);
        let f = d[j] / scale[j];
        m_star.column_mut(j).scale_mut(f);
    }
    Ok((b_new, SpdMatrix::symmetrized(r_new)?))
}

/// Gamma `(shape, rate)` of each coefficient precision given `B` and `R`.
pub fn psi_posterior(
    b: &DMatrix<f64>,
    r: &SpdMatrix,
    q: usize,
    hyper: &PsiHyperPrior,
) -> Result<[(f64, f64); 3]> {
    let p = r.dim();
    if b.nrows() != 1 + q + p || b.ncols() != p {
        return Err(Error::Dimension("B must be (1 + q + p) x p".into()));
    }
    let r_inv = r.inverse()?.into_inner();
    let diag: Vec<f64> = (0..b.nrows())
        .map(|i| {
            let row = b.row(i);
            (row * &r_inv * row.transpose())[(0, 0)]
        })
        .collect();
    let a0 = diag[0];
    let ax: f64 = diag[1..1 + q].iter().sum();
    let ay: f64 = diag[1 + q..].iter().sum();
    let pf = p as f64;
    Ok([
        (0.5 * pf + hyper.alpha0, 0.5 * a0 + hyper.beta0),
        (0.5 * pf * q as f64 + hyper.alpha_x, 0.5 * ax + hyper.beta_x),
        (0.5 * pf * pf + hyper.alpha_y, 0.5 * ay + hyper.beta_y),
    ])
}

pub fn update_psi<R: Rng + ?Sized>(
    b: &DMatrix<f64>,
    r: &SpdMatrix,
    q: usize,
    hyper: &PsiHyperPrior,
    rng: &mut R,
) -> Result<[f64; 3]> {
    let post = psi_posterior(b, r, q, hyper)?;
    Ok([
        sample_gamma(post[0].0, post[0].1, rng)?,
        sample_gamma(post[1].0, post[1].1, rng)?,
        sample_gamma(post[2].0, post[2].1, rng)?,
    ])
}

#[derive(Debug, Clone)]
pub struct MissBart1Priors {
    pub tree: TreePrior,
    pub node: NodePriorParams,
    pub omega: OmegaPrior,
    pub psi: PsiHyperPrior,
}

/// Full sampler state on the scaled response axis.
#[derive(Debug, Clone)]
pub struct MissBart1State {
    /// Covariates without missing cells.
    pub x: Design,
    /// Responses with current imputations filled in.
    pub y: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    pub forest: ForestState,
    pub omega: SpdMatrix,
    pub probit: ProbitRegState,
}

impl MissBart1State {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.n_vars()
    }

    pub fn z(&self) -> DMatrix<f64> {
        assemble_z(&self.x, &self.y)
    }

    pub fn sign_conforms(&self) -> bool {
        let m = &self.probit.m_star;
        (0..self.n()).all(|i| {
            (0..self.p()).all(|j| {
                if self.observed[(i, j)] {
                    m[(i, j)] >= 0.0
                } else {
                    m[(i, j)] <= 0.0
                }
            })
        })
    }
}

pub struct MissBart1Sampler {
    pub state: MissBart1State,
    pub priors: MissBart1Priors,
    pub trunc_sweeps: usize,
    pub tree_moves: MoveStats,
    z_fixed: DMatrix<f64>,
    missing_rows: Vec<(usize, Vec<usize>)>,
}

fn missing_rows(observed: &DMatrix<bool>) -> Vec<(usize, Vec<usize>)> {
    (0..observed.nrows())
        .filter_map(|i| {
            let mis: Vec<usize> = (0..observed.ncols()).filter(|&j| !observed[(i, j)]).collect();
            (!mis.is_empty()).then_some((i, mis))
        })
        .collect()
}

fn fixed_z(x: &Design) -> DMatrix<f64> {
    DMatrix::from_fn(x.n_rows(), 1 + x.n_vars(), |i, c| if c == 0 { 1.0 } else { x.value(i, c - 1) })
}

impl MissBart1Sampler {
    /// Starts from zero imputations, stump trees, `B = 0`, `R = I` and the
    /// prior means of Ω and the coefficient precisions.
    pub fn new<R: Rng + ?Sized>(
        x: Design,
        y_scaled: &DMatrix<f64>,
        k_trees: usize,
        priors: MissBart1Priors,
        trunc_sweeps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, p) = y_scaled.shape();
        if x.has_missing() {
            return Err(Error::Data("covariates must be imputed before sampling".into()));
        }
        if x.n_vars() > 0 && x.n_rows() != n {
            return Err(Error::Dimension("X and Y row counts differ".into()));
        }
        let q = x.n_vars();
        let observed = y_scaled.map(|v| !v.is_nan());
        let y = y_scaled.map(|v| if v.is_nan() { 0.0 } else { v });
        let mut m_star = DMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                let h = std_normal_above(0.0, rng);
                m_star[(i, j)] = if observed[(i, j)] { h } else { -h };
            }
        }
        let psi = [
            priors.psi.alpha0 / priors.psi.beta0,
            priors.psi.alpha_x / priors.psi.beta_x,
            priors.psi.alpha_y / priors.psi.beta_y,
        ];
        let omega_init: Vec<f64> = priors.omega.lambda.iter().map(|l| 1.0 / l).collect();
        let state = MissBart1State {
            forest: ForestState::new(k_trees, n, p),
            omega: SpdMatrix::from_diagonal(&omega_init)?,
            probit: ProbitRegState {
                b: DMatrix::zeros(1 + q + p, p),
                r: SpdMatrix::identity(p),
                m_star,
                psi,
            },
            x,
            y,
            observed,
        };
        Ok(Self::from_state(state, priors, trunc_sweeps))
    }

    pub fn from_state(state: MissBart1State, priors: MissBart1Priors, trunc_sweeps: usize) -> Self {
        let z_fixed = fixed_z(&state.x);
        let missing_rows = missing_rows(&state.observed);
        MissBart1Sampler {
            state,
            priors,
            trunc_sweeps,
            tree_moves: MoveStats::default(),
            z_fixed,
            missing_rows,
        }
    }

    /// Replaces the responses and latent variables; the observation pattern
    /// follows the signs of `m_star`.
    pub fn reset_data(&mut self, y: DMatrix<f64>, m_star: DMatrix<f64>) {
        self.state.observed = m_star.map(|v| v > 0.0);
        self.missing_rows = missing_rows(&self.state.observed);
        self.state.y = y;
        self.state.probit.m_star = m_star;
    }

    /// One full Gibbs iteration.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let s = &mut self.state;
        let leaf = LeafModel::new(&s.omega, &self.priors.node)?;
        let ctx = MhContext {
            design: &s.x,
            prior: &self.priors.tree,
            leaf: &leaf,
            use_likelihood: true,
        };
        let moves = s.forest.sweep(&s.y, &ctx, rng);
        self.tree_moves.merge(&moves);

        let resid = &s.y - s.forest.fitted();
        s.omega = update_omega(&resid, &self.priors.omega, rng)?;

        let z = assemble_z(&s.x, &s.y);
        update_m_star(
            &mut s.probit.m_star,
            &z,
            &s.probit.b,
            &s.probit.r,
            &s.observed,
            self.trunc_sweeps,
            rng,
        )?;

        update_y_mis(
            &mut s.y,
            s.forest.fitted(),
            &s.omega,
            &s.probit.b,
            &s.probit.r,
            &s.probit.m_star,
            &self.z_fixed,
            &self.missing_rows,
            rng,
        )?;

        let z = assemble_z(&s.x, &s.y);
        let psi_prec = psi_precision_vector(s.probit.psi, s.q(), s.p());
        let (b, r) = update_b_r(&mut s.probit.m_star, &z, &s.probit.r, &psi_prec, rng)?;
        s.probit.b = b;
        s.probit.r = r;
        s.probit.psi = update_psi(&s.probit.b, &s.probit.r, s.q(), &self.priors.psi, rng)?;
        Ok(())
    }
}

pub(crate) const PRED_STREAM_OFFSET: u64 = 1 << 40;

pub(crate) fn column_means(x: &Design) -> Vec<f64> {
    (0..x.n_vars())
        .map(|j| {
            let obs: Vec<f64> = x.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
            if obs.is_empty() {
                0.0
            } else {
                obs.iter().sum::<f64>() / obs.len() as f64
            }
        })
        .collect()
}

pub(crate) fn impute_with(x: &Design, means: &[f64]) -> Design {
    let cols = (0..x.n_vars())
        .map(|j| x.column(j).iter().map(|&v| if v.is_nan() { means[j] } else { v }).collect())
        .collect();
    if x.n_vars() == 0 {
        return Design::empty(x.n_rows());
    }
    Design::from_columns(cols).expect("same shape as input")
}

/// Runs chain `chain` of the sampler on `data`, storing draws after burn-in.
pub fn run_missbart1(
    data: &Dataset,
    cfg: &SamplerConfig,
    x_test: Option<&Design>,
    chain: u64,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let scaler = ResponseScaler::fit(&data.y)?;
    let y_scaled = scaler.scale(&data.y);
    let means = column_means(&data.x);
    let x = impute_with(&data.x, &means);
    let x_test = x_test.map(|t| impute_with(t, &means));
    if let Some(t) = &x_test {
        if t.n_vars() != data.q() {
            return Err(Error::Dimension("test covariates have the wrong width".into()));
        }
    }
    let (node, omega) = calibrate_priors(&y_scaled, &x, cfg.k_trees, &cfg.priors)?;
    let priors = MissBart1Priors {
        tree: cfg.tree_prior,
        node,
        omega,
        psi: cfg.psi.unwrap_or_else(|| PsiHyperPrior::defaults(data.p(), data.q())),
    };
    let mut rng: ChainRng = chain_rng(cfg.seed, chain);
    let mut pred_rng = chain_rng(cfg.seed, chain + PRED_STREAM_OFFSET);
    let mut sampler = MissBart1Sampler::new(x, &y_scaled, cfg.k_trees, priors, cfg.trunc_sweeps, &mut rng)?;
    let mut rec = Recorder::new(RecorderSetup {
        model: ModelKind::MissBart1,
        config: cfg,
        x_names: &data.x_names,
        y_names: &data.y_names,
        n: data.n(),
        scaler: &scaler,
        missing_cells: data.missing_cells(),
        n_test: x_test.as_ref().map_or(0, |t| t.n_rows()),
    });
    for it in 0..cfg.burn_in + cfg.n_draws {
        sampler.step(&mut rng)?;
        if it < cfg.burn_in || (it - cfg.burn_in + 1) % cfg.thin != 0 {
            continue;
        }
        let s = &sampler.state;
        let test_fit = x_test.as_ref().map(|t| s.forest.predict(t));
        let mut draw = rec.record_data(
            s.forest.trees(),
            s.forest.fitted(),
            &s.y,
            &s.omega,
            test_fit.as_ref(),
            &mut pred_rng,
        )?;
        draw.b = s.probit.b.transpose().as_slice().to_vec();
        draw.r = s.probit.r.to_row_major();
        draw.psi = s.probit.psi.to_vec();
        rec.push(draw);
    }
    Ok(rec.finish(sampler.tree_moves, MoveStats::default(), (0, 0)))
}
