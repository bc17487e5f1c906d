use missbart::data_model::{DataModelPriors, OmegaPrior};
use missbart::missbart2::{miss_node_prior, MissBart2Priors, MissBart2Sampler};
use missbart::stats::dist::TruncationBox;
use missbart::stats::{chain_rng, sample_mvn, sample_trunc_mvn, SpdMatrix};
use missbart::tree::{Design, NodePriorParams, TreePrior};
use missbart::{fit, Dataset, ModelKind, SamplerConfig};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn two_sample_ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn far_interior_truncation_matches_unconstrained_mvn() {
    let mean = DVector::from_column_slice(&[10.0, 10.0]);
    let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0])).unwrap();
    let bounds = TruncationBox::from_mask(&[true, true]);
    let mut rng = chain_rng(1, 0);
    let m = 10_000;
    let (mut a, mut b) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for _ in 0..m {
        let t = sample_trunc_mvn(&mean, &cov, &bounds, &mut rng, 10).unwrap();
        let u = sample_mvn(&mean, &cov, &mut rng).unwrap();
        a.push(t[0] + t[1]);
        b.push(u[0] + u[1]);
    }
    // two-sample KS at the 1% level
    let crit = 1.63 * (2.0 / m as f64).sqrt();
    assert!(two_sample_ks(a, b) < crit);
}

#[test]
fn frozen_parameters_without_missingness_factor_give_conditional_normal() {
    let n = 6;
    let x = Design::from_columns(vec![(0..n).map(|i| i as f64).collect()]).unwrap();
    let mut y = DMatrix::from_fn(n, 2, |i, j| 0.1 * i as f64 - 0.05 * j as f64);
    y[(2, 0)] = f64::NAN;
    y[(2, 1)] = f64::NAN;
    let priors = MissBart2Priors {
        data: DataModelPriors {
            tree: TreePrior::default(),
            node: NodePriorParams::centered(20.0, 2),
            omega: OmegaPrior::from_lambda(5.0, vec![0.05, 0.05]).unwrap(),
        },
        miss_tree: TreePrior::default(),
        miss_node: miss_node_prior(5, 0.95, 2),
    };
    let mut rng = chain_rng(2, 0);
    let mut s = MissBart2Sampler::new(x, &y, 4, 5, priors, 0.25, &mut rng).unwrap();
    let omega = DMatrix::from_row_slice(2, 2, &[30.0, -12.0, -12.0, 20.0]);
    s.state.data.omega = SpdMatrix::new(omega.clone()).unwrap();
    s.miss_factor = false;
    let cov = omega.try_inverse().unwrap();
    for _ in 0..2000 {
        s.update_y_mis(&mut rng);
    }
    let (mut d0, mut d1) = (Vec::new(), Vec::new());
    for _ in 0..10_000 {
        for _ in 0..40 {
            s.update_y_mis(&mut rng);
        }
        d0.push(s.state.y[(2, 0)]);
        d1.push(s.state.y[(2, 1)]);
    }
    // stump forests fit zero, so each cell's marginal is N(0, Σ_jj)
    let crit = 1.63 / 100.0;
    for (draws, j) in [(d0, 0), (d1, 1)] {
        let target = Normal::new(0.0, cov[(j, j)].sqrt()).unwrap();
        let d = ks_statistic(draws, |v| target.cdf(v));
        assert!(d < crit, "cell {j}: D = {d}");
    }
}

#[test]
fn univariate_step_function_is_learned() {
    let n = 100;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let y = DMatrix::from_fn(n, 1, |i, _| if xs[i] < 0.5 { 0.0 } else { 1.0 });
    let data = Dataset::new(Design::from_columns(vec![xs]).unwrap(), y.clone()).unwrap();
    let cfg = SamplerConfig {
        k_trees: 20,
        burn_in: 500,
        n_draws: 200,
        seed: 3,
        ..SamplerConfig::default()
    };
    let chain = fit::fit(ModelKind::MvBart, &data, &cfg, None).unwrap();
    let fitted = chain.fitted_mean_matrix();
    let rmse = ((fitted - y).norm_squared() / n as f64).sqrt();
    assert!(rmse < 0.05, "train rmse {rmse}");
}

#[test]
fn chains_with_equal_seeds_agree_and_different_seeds_differ() {
    let xs: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
    let mut y = DMatrix::from_fn(40, 2, |i, j| (xs[i] * (j + 2) as f64).sin());
    for i in (0..40).step_by(5) {
        y[(i, 1)] = f64::NAN;
    }
    let data = Dataset::new(Design::from_columns(vec![xs]).unwrap(), y).unwrap();
    let cfg = |seed| SamplerConfig {
        burn_in: 20,
        n_draws: 20,
        chains: 2,
        seed,
        ..SamplerConfig::default()
    };
    for model in [ModelKind::MissBart1, ModelKind::MissBart2, ModelKind::MvBart] {
        let a = fit::fit(model, &data, &cfg(5), None).unwrap();
        let b = fit::fit(model, &data, &cfg(5), None).unwrap();
        let c = fit::fit(model, &data, &cfg(6), None).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_ne!(a.draws, c.draws);
        assert_eq!(a.n_draws(), 40);
    }
}
