use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-10;

/// Survival function of `Gamma(shape, rate)` at `x`.
pub fn gamma_sf(shape: f64, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(shape, rate * x)
}

/// Finds λ with `P(G > tau_hat) = rho` for `G ~ Gamma(nu/2, rate nu*lambda/2)`.
///
/// The survival probability falls monotonically in λ, so the root is
/// bracketed by geometric expansion and refined by bisection on log λ.
pub fn solve_lambda(nu: f64, rho: f64, tau_hat: f64) -> Result<f64> {
    if !(nu > 0.0) || !(rho > 0.0 && rho < 1.0) || !(tau_hat > 0.0) || !tau_hat.is_finite() {
        return Err(Error::Domain(format!(
            "solve_lambda needs nu > 0, 0 < rho < 1, tau_hat > 0; got ({nu}, {rho}, {tau_hat})"
        )));
    }
    let shape = 0.5 * nu;
    let f = |lambda: f64| gamma_sf(shape, 0.5 * nu * lambda, tau_hat) - rho;

    let mut lo = 1.0 / tau_hat;
    let mut hi = lo;
    let mut expansions = 0;
    while f(lo) < 0.0 {
        lo *= 0.5;
        expansions += 1;
        if expansions > 2000 || lo == 0.0 {
            return Err(Error::Numeric("lambda root not bracketed below".into()));
        }
    }
    expansions = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 || !hi.is_finite() {
            return Err(Error::Numeric("lambda root not bracketed above".into()));
        }
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= REL_TOL * hi * 1e-2 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pair_matches_reference_quantile() {
        // independent oracle: scipy.special.gammainccinv(1.5, 0.9) = 0.29218718707759156
        let lambda = solve_lambda(3.0, 0.9, 1.0).unwrap();
        assert!((lambda / 0.194_791_458_051_727_7 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn survival_equation_holds() {
        let lambda = solve_lambda(3.0, 0.9, 2.5).unwrap();
        assert!((gamma_sf(1.5, 1.5 * lambda, 2.5) - 0.9).abs() < 1e-6);
    }

    #[test]
    fn scaling_tau_hat_scales_lambda_inversely() {
        let base = solve_lambda(3.0, 0.9, 1.0).unwrap();
        for &c in &[0.01, 0.5, 3.0, 250.0] {
            let scaled = solve_lambda(3.0, 0.9, c).unwrap();
            assert!((scaled * c / base - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(solve_lambda(0.0, 0.9, 1.0).is_err());
        assert!(solve_lambda(3.0, 1.0, 1.0).is_err());
        assert!(solve_lambda(3.0, 0.9, -1.0).is_err());
    }
}
