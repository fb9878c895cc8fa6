//! Poisson tail bounds.
//!
//! For P ~ Poisson(lambda) and 0 < eps < 1,
//!
//!   P[P < (1-eps) lambda] < exp(-lambda eps^2 / 2),
//!   P[P > (1+eps) lambda] < exp(-lambda eps^2 / 4),
//!
//! checked here against the exact tails. Both inequalities are strict, and
//! the thresholds are strict too, so on integer boundaries
//! P[P < a] = P[P <= ceil(a) - 1] and P[P > b] = P[P >= floor(b) + 1].

use crate::error::{Error, Result};
use crate::stats::{poisson_cdf, poisson_log_pmf};
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChernoffBounds {
    pub lambda: f64,
    pub eps: f64,
    /// exp(-lambda eps^2 / 2), bounding P[P < (1-eps) lambda].
    pub lower_bound: f64,
    /// exp(-lambda eps^2 / 4), bounding P[P > (1+eps) lambda].
    pub upper_bound: f64,
    /// Exact P[P < (1-eps) lambda].
    pub exact_lower: f64,
    /// Exact P[P > (1+eps) lambda].
    pub exact_upper: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

/// P[Poisson(lambda) > k], summed upward from k+1 so the small tail never
/// suffers the cancellation of 1 - cdf.
fn poisson_upper_tail(lambda: f64, k: i64) -> f64 {
    if k < 0 {
        return 1.0;
    }
    let mut j = k as u64 + 1;
    let mut acc = 0.0f64;
    loop {
        let term = poisson_log_pmf(lambda, j).exp();
        acc += term;
        // Terms decay at least geometrically once j > lambda.
        if j as f64 > lambda && (term < acc * 1e-18 || term == 0.0) {
            break;
        }
        j += 1;
    }
    acc.min(1.0)
}

pub fn chernoff_poisson(lambda: f64, eps: f64) -> Result<ChernoffBounds> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("lambda {lambda} must be positive and finite")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::config(format!("eps {eps} must lie in (0, 1)")));
    }
    let lower_bound = (-lambda * eps * eps / 2.0).exp();
    let upper_bound = (-lambda * eps * eps / 4.0).exp();
    let a = (1.0 - eps) * lambda;
    let b = (1.0 + eps) * lambda;
    let exact_lower = poisson_cdf(lambda, a.ceil() as i64 - 1);
    let exact_upper = poisson_upper_tail(lambda, b.floor() as i64);
    Ok(ChernoffBounds {
        lambda,
        eps,
        lower_bound,
        upper_bound,
        exact_lower,
        exact_upper,
        lower_holds: exact_lower < lower_bound,
        upper_holds: exact_upper < upper_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_values_at_lambda_100() {
        let b = chernoff_poisson(100.0, 0.5).unwrap();
        assert!((b.lower_bound - (-12.5f64).exp()).abs() < 1e-18);
        // P[P < 50] = P[P <= 49], cross-checked against statrs.
        use statrs::distribution::{DiscreteCDF, Poisson};
        let exact = Poisson::new(100.0).unwrap().cdf(49);
        assert!((b.exact_lower - exact).abs() < 1e-12);
        assert!(b.exact_lower < b.lower_bound);
        assert!(b.lower_holds && b.upper_holds);
    }

    #[test]
    fn strict_thresholds_on_integer_boundaries() {
        // (1-eps) lambda = 8 exactly: P[P < 8] = P[P <= 7].
        let b = chernoff_poisson(10.0, 0.2).unwrap();
        assert!((b.exact_lower - poisson_cdf(10.0, 7)).abs() < 1e-15);
        // (1+eps) lambda = 12 exactly: P[P > 12] = P[P >= 13].
        assert!((b.exact_upper - (1.0 - poisson_cdf(10.0, 12))).abs() < 1e-12);
    }

    #[test]
    fn bounds_approach_one_as_eps_vanishes() {
        let b = chernoff_poisson(50.0, 1e-9).unwrap();
        assert!(b.lower_bound > 0.999_999_999);
        assert!(b.upper_bound > 0.999_999_999);
        assert!(b.lower_holds && b.upper_holds);
    }

    #[test]
    fn dominates_exact_tails_on_the_grid() {
        for &lambda in &[1.0, 10.0, 100.0] {
            for k in 1..=9 {
                let eps = k as f64 / 10.0;
                let b = chernoff_poisson(lambda, eps).unwrap();
                assert!(
                    b.lower_holds,
                    "lower tail not dominated at lambda={lambda} eps={eps}: \
                     exact {} vs bound {}",
                    b.exact_lower, b.lower_bound
                );
                assert!(
                    b.upper_holds,
                    "upper tail not dominated at lambda={lambda} eps={eps}: \
                     exact {} vs bound {}",
                    b.exact_upper, b.upper_bound
                );
            }
        }
    }

    #[test]
    fn upper_tail_sum_agrees_with_statrs() {
        use statrs::distribution::{DiscreteCDF, Poisson};
        for &(lambda, k) in &[(3.0f64, 5i64), (100.0, 130), (0.5, 0)] {
            let mine = poisson_upper_tail(lambda, k);
            let reference = 1.0 - Poisson::new(lambda).unwrap().cdf(k as u64);
            assert!(
                (mine - reference).abs() < 1e-10 * (1.0 + reference),
                "lambda={lambda} k={k}: {mine} vs {reference}"
            );
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(chernoff_poisson(0.0, 0.5).is_err());
        assert!(chernoff_poisson(-1.0, 0.5).is_err());
        assert!(chernoff_poisson(10.0, 0.0).is_err());
        assert!(chernoff_poisson(10.0, 1.0).is_err());
    }
}
