//! Joint-distribution checks: independent prior-then-data draws against a
//! chain alternating sampler steps with fresh data.

use missbart::config::PsiHyperPrior;
use missbart::data_model::{DataModelPriors, DataModelState, OmegaPrior};
use missbart::diagnostics::geweke_z;
use missbart::missbart1::{
    assemble_z, psi_precision_vector, MissBart1Priors, MissBart1Sampler, MissBart1State, ProbitRegState,
};
use missbart::missbart2::{miss_node_prior, ProbitForest};
use missbart::stats::dist::standard_normal;
use missbart::stats::{chain_rng, sample_gamma, sample_inv_wishart, sample_wishart, ChainRng, SpdMatrix};
use missbart::tree::{
    sample_prior_leaves, sample_prior_tree, DecisionTree, Design, ForestState, LeafModel, NodePriorParams,
    TreePrior,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct GewekeReport {
    pub names: Vec<String>,
    pub z: Vec<f64>,
}

impl GewekeReport {
    pub fn pass_fraction(&self, limit: f64) -> f64 {
        self.z.iter().filter(|z| z.abs() < limit).count() as f64 / self.z.len() as f64
    }

    pub fn worst(&self) -> (String, f64) {
        let (i, z) = self
            .z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        (self.names[i].clone(), *z)
    }
}

fn compare(names: Vec<String>, mcs: &[Vec<f64>], scs: &[Vec<f64>], batches: usize) -> GewekeReport {
    let k = names.len();
    let z = (0..k)
        .map(|s| {
            let a: Vec<f64> = mcs.iter().map(|v| v[s]).collect();
            let b: Vec<f64> = scs.iter().map(|v| v[s]).collect();
            geweke_z(&a, &b, batches)
        })
        .collect();
    GewekeReport { names, z }
}

fn toy_design(n: usize, q: usize, rng: &mut ChainRng) -> Design {
    Design::from_columns((0..q).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()).unwrap()
}

fn prior_forest(k: usize, design: &Design, prior: &TreePrior, leaf: &LeafModel, p: usize, rng: &mut ChainRng) -> ForestState {
    let trees: Vec<DecisionTree> = (0..k)
        .map(|_| {
            let mut t = sample_prior_tree(design, prior, p, rng);
            sample_prior_leaves(&mut t, leaf, rng);
            t
        })
        .collect();
    ForestState::from_trees(trees, design, p).unwrap()
}

fn noise_rows(mean: &DMatrix<f64>, cov: &SpdMatrix, rng: &mut ChainRng) -> DMatrix<f64> {
    let l = cov.cholesky().unwrap().l();
    let mut out = mean.clone();
    for i in 0..mean.nrows() {
        let z = DVector::from_fn(mean.ncols(), |_, _| standard_normal(rng));
        let e = &l * z;
        for j in 0..mean.ncols() {
            out[(i, j)] += e[j];
        }
    }
    out
}

fn forest_stats(f: &ForestState, out: &mut Vec<f64>) {
    let leaves: usize = f.trees().iter().map(|t| t.n_leaves()).sum();
    out.push(leaves as f64);
    let fit = f.fitted();
    for j in 0..fit.ncols() {
        let col = fit.column(j);
        out.push(col.mean());
        out.push(col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64);
    }
}

fn omega_stats(omega: &SpdMatrix, out: &mut Vec<f64>) {
    let m = omega.matrix();
    let p = m.nrows();
    for j in 0..p {
        out.push(m[(j, j)].ln());
    }
    for i in 0..p {
        for j in i + 1..p {
            out.push(m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt());
        }
    }
}

fn omega_names(p: usize, names: &mut Vec<String>) {
    for j in 0..p {
        names.push(format!("log omega[{j},{j}]"));
    }
    for i in 0..p {
        for j in i + 1..p {
            names.push(format!("omega corr[{i},{j}]"));
        }
    }
}

fn forest_names(tag: &str, p: usize, names: &mut Vec<String>) {
    names.push(format!("{tag} leaves"));
    for j in 0..p {
        names.push(format!("{tag} mean fit[{j}]"));
        names.push(format!("{tag} mean sq fit[{j}]"));
    }
}

pub struct ToyDims {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
}

fn toy_omega_prior(p: usize) -> OmegaPrior {
    // nu = p + 3 and V = I / nu so that E[Ω] = I
    let nu = p as f64 + 3.0;
    OmegaPrior::from_lambda(nu, vec![1.0; p]).unwrap()
}

fn toy_node_prior(k: usize, p: usize) -> NodePriorParams {
    NodePriorParams::centered(k as f64, p)
}

fn correlation_from_prior(p: usize, rng: &mut ChainRng) -> SpdMatrix {
    let sigma = sample_inv_wishart(p as f64 + 1.0, &SpdMatrix::identity(p), rng).unwrap();
    let d: Vec<f64> = (0..p).map(|j| sigma.matrix()[(j, j)].sqrt()).collect();
    let mut r = DMatrix::from_fn(p, p, |i, j| sigma.matrix()[(i, j)] / (d[i] * d[j]));
    for j in 0..p {
        r[(j, j)] = 1.0;
    }
    SpdMatrix::symmetrized(r).unwrap()
}

fn coefficients_from_prior(psi_prec: &[f64], r: &SpdMatrix, rng: &mut ChainRng) -> DMatrix<f64> {
    let p = r.dim();
    let cr = r.cholesky().unwrap().l();
    let e = DMatrix::from_fn(psi_prec.len(), p, |_, _| standard_normal(rng));
    let mut b = e * cr.transpose();
    for (c, &t) in psi_prec.iter().enumerate() {
        b.row_mut(c).scale_mut(1.0 / t.sqrt());
    }
    b
}

/// Latent missingness rows `N(Bᵀ Z_i, R)`.
fn latent_rows(z: &DMatrix<f64>, b: &DMatrix<f64>, r: &SpdMatrix, rng: &mut ChainRng) -> DMatrix<f64> {
    noise_rows(&(z * b), r, rng)
}

fn squash(v: f64) -> f64 {
    v / (1.0 + v.abs())
}

fn mb1_stats(s: &MissBart1State) -> Vec<f64> {
    let mut out = Vec::new();
    omega_stats(&s.omega, &mut out);
    forest_stats(&s.forest, &mut out);
    for t in s.probit.psi {
        out.push(t.ln());
    }
    let p = s.p();
    for i in 0..p {
        for j in i + 1..p {
            out.push(s.probit.r.matrix()[(i, j)]);
        }
    }
    for v in s.probit.b.iter() {
        out.push(squash(*v));
        out.push(squash(*v).powi(2));
    }
    out
}

fn mb1_names(d: &ToyDims) -> Vec<String> {
    let mut names = Vec::new();
    omega_names(d.p, &mut names);
    forest_names("data", d.p, &mut names);
    for t in ["tau0", "tauX", "tauY"] {
        names.push(format!("log {t}"));
    }
    for i in 0..d.p {
        for j in i + 1..d.p {
            names.push(format!("R[{i},{j}]"));
        }
    }
    // column-major iteration over B
    for j in 0..d.p {
        for c in 0..1 + d.q + d.p {
            names.push(format!("B[{c},{j}]"));
            names.push(format!("B[{c},{j}]^2"));
        }
    }
    names
}

/// Prior draw of every parameter followed by complete data given them.
fn mb1_joint_draw(d: &ToyDims, x: &Design, priors: &MissBart1Priors, rng: &mut ChainRng) -> MissBart1State {
    let leaf = LeafModel::new(&SpdMatrix::identity(d.p), &priors.node).unwrap();
    let forest = prior_forest(d.k, x, &priors.tree, &leaf, d.p, rng);
    let omega = sample_wishart(priors.omega.nu, &priors.omega.scale(), rng).unwrap();
    let h = &priors.psi;
    let psi = [
        sample_gamma(h.alpha0, h.beta0, rng).unwrap(),
        sample_gamma(h.alpha_x, h.beta_x, rng).unwrap(),
        sample_gamma(h.alpha_y, h.beta_y, rng).unwrap(),
    ];
    let r = correlation_from_prior(d.p, rng);
    let b = coefficients_from_prior(&psi_precision_vector(psi, d.q, d.p), &r, rng);
    let y = noise_rows(forest.fitted(), &omega.inverse().unwrap(), rng);
    let m_star = latent_rows(&assemble_z(x, &y), &b, &r, rng);
    MissBart1State {
        x: x.clone(),
        observed: m_star.map(|v| v > 0.0),
        y,
        forest,
        omega,
        probit: ProbitRegState { b, r, m_star, psi },
    }
}

fn mb1_priors(d: &ToyDims) -> MissBart1Priors {
    MissBart1Priors {
        tree: TreePrior::default(),
        node: toy_node_prior(d.k, d.p),
        omega: toy_omega_prior(d.p),
        psi: PsiHyperPrior::defaults(d.p, d.q),
    }
}

pub fn missbart1_geweke(d: &ToyDims, sweeps: usize, seed: u64) -> GewekeReport {
    let mut rng = chain_rng(seed, 0);
    let x = toy_design(d.n, d.q, &mut rng);
    let priors = mb1_priors(d);
    let mcs: Vec<Vec<f64>> = (0..sweeps).map(|_| mb1_stats(&mb1_joint_draw(d, &x, &priors, &mut rng))).collect();

    let start = mb1_joint_draw(d, &x, &priors, &mut rng);
    let mut sampler = MissBart1Sampler::from_state(start, priors, 10);
    let mut scs = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        sampler.step(&mut rng).unwrap();
        let s = &sampler.state;
        scs.push(mb1_stats(s));
        let y = noise_rows(s.forest.fitted(), &s.omega.inverse().unwrap(), &mut rng);
        let m_star = latent_rows(&assemble_z(&s.x, &y), &s.probit.b, &s.probit.r, &mut rng);
        sampler.reset_data(y, m_star);
    }
    compare(mb1_names(d), &mcs, &scs, 50)
}

/// Data-model sub-chain: forest and Ω with fully observed responses.
pub fn data_model_geweke(d: &ToyDims, sweeps: usize, seed: u64) -> GewekeReport {
    let mut rng = chain_rng(seed, 1);
    let x = toy_design(d.n, d.q, &mut rng);
    let priors = DataModelPriors {
        tree: TreePrior::default(),
        node: toy_node_prior(d.k, d.p),
        omega: toy_omega_prior(d.p),
    };
    let leaf = LeafModel::new(&SpdMatrix::identity(d.p), &priors.node).unwrap();
    let draw = |rng: &mut ChainRng| {
        let forest = prior_forest(d.k, &x, &priors.tree, &leaf, d.p, rng);
        let omega = sample_wishart(priors.omega.nu, &priors.omega.scale(), rng).unwrap();
        DataModelState { forest, omega }
    };
    let stats = |s: &DataModelState| {
        let mut out = Vec::new();
        omega_stats(&s.omega, &mut out);
        forest_stats(&s.forest, &mut out);
        out
    };
    let mcs: Vec<Vec<f64>> = (0..sweeps).map(|_| stats(&draw(&mut rng))).collect();
    let mut state = draw(&mut rng);
    let mut y = noise_rows(state.forest.fitted(), &state.omega.inverse().unwrap(), &mut rng);
    let mut scs = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        state.sweep_trees(&x, &y, &priors, &mut rng).unwrap();
        state.update_omega(&y, &priors, &mut rng).unwrap();
        scs.push(stats(&state));
        y = noise_rows(state.forest.fitted(), &state.omega.inverse().unwrap(), &mut rng);
    }
    let mut names = Vec::new();
    omega_names(d.p, &mut names);
    forest_names("data", d.p, &mut names);
    compare(names, &mcs, &scs, 50)
}

/// Missingness sub-chain: probit forest over fixed predictors `(X, Y)`.
pub fn probit_forest_geweke(d: &ToyDims, sweeps: usize, seed: u64) -> GewekeReport {
    let mut rng = chain_rng(seed, 2);
    let design = toy_design(d.n, d.q + d.p, &mut rng);
    let tree = TreePrior::default();
    let node = miss_node_prior(d.k, 0.95, d.p);
    let leaf = LeafModel::unit(d.p, &node).unwrap();
    let unit = SpdMatrix::identity(d.p);
    let stats = |f: &ForestState| {
        let mut out = Vec::new();
        forest_stats(f, &mut out);
        out
    };
    let mcs: Vec<Vec<f64>> = (0..sweeps)
        .map(|_| stats(&prior_forest(d.k, &design, &tree, &leaf, d.p, &mut rng)))
        .collect();
    let forest = prior_forest(d.k, &design, &tree, &leaf, d.p, &mut rng);
    let m_star = noise_rows(forest.fitted(), &unit, &mut rng);
    let mut pf = ProbitForest {
        observed: m_star.map(|v| v > 0.0),
        forest,
        m_star,
    };
    let mut scs = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        pf.sweep_trees(&design, &tree, &leaf, &mut rng);
        pf.update_latent(&mut rng);
        assert!(pf.sign_conforms());
        scs.push(stats(&pf.forest));
        pf.m_star = noise_rows(pf.forest.fitted(), &unit, &mut rng);
        pf.observed = pf.m_star.map(|v| v > 0.0);
    }
    let mut names = Vec::new();
    forest_names("miss", d.p, &mut names);
    compare(names, &mcs, &scs, 50)
}
