//! Small statistical toolbox used by experiments and acceptance checks:
//! least squares fits, Wilson intervals, chi-square goodness of fit,
//! Kolmogorov-Smirnov against Exp(1), and an exact Poisson pmf/cdf in
//! log space (own implementation; cross-checked against statrs in tests).

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// Ordinary least squares y ~ intercept + slope * x.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy <= 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept, r2, n })
}

/// Wilson 95% score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WilsonInterval {
    pub freq: f64,
    pub lo: f64,
    pub hi: f64,
    pub successes: u64,
    pub trials: u64,
}

pub fn wilson_interval(successes: u64, trials: u64) -> WilsonInterval {
    assert!(trials > 0, "wilson interval needs at least one trial");
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // At the boundaries the score limits are exactly 0 and 1.
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    WilsonInterval {
        freq: p,
        lo,
        hi,
        successes,
        trials,
    }
}

/// Chi-square goodness-of-fit with tail pooling so every expected count is
/// at least `min_expected`. Degrees of freedom = pooled bins - 1 - `fitted`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

pub fn chi_square_gof(
    observed: &[f64],
    expected: &[f64],
    min_expected: f64,
    fitted: usize,
) -> Option<ChiSquareTest> {
    assert_eq!(observed.len(), expected.len());
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e >= min_expected {
            obs.push(acc_o);
            exp.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    // Fold any remainder into the last bin.
    if acc_e > 0.0 || acc_o > 0.0 {
        if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
            *o += acc_o;
            *e += acc_e;
        } else {
            return None;
        }
    }
    if obs.len() < 2 + fitted {
        return None;
    }
    let stat: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = obs.len() - 1 - fitted;
    let chi = ChiSquared::new(dof as f64).ok()?;
    Some(ChiSquareTest {
        statistic: stat,
        dof,
        p_value: 1.0 - chi.cdf(stat),
        bins: obs.len(),
    })
}

/// Asymptotic Kolmogorov distribution Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test against a cdf given as a closure.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsTest {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / nf;
        let hi = (i + 1) as f64 / nf;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    KsTest {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n,
    }
}

/// KS test against Exp(1).
pub fn ks_test_exp1(samples: &[f64]) -> KsTest {
    ks_test(samples, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() })
}

/// log pmf of Poisson(lambda) at k, computed with ln_gamma.
pub fn poisson_log_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let kf = k as f64;
    kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)
}

pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    poisson_log_pmf(lambda, k).exp()
}

/// Exact P[Poisson(lambda) <= k] by summing the pmf.
pub fn poisson_cdf(lambda: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for j in 0..=(k as u64) {
        s += poisson_pmf(lambda, j);
    }
    s.min(1.0)
}

/// Standard normal cdf.
pub fn normal_cdf(z: f64) -> f64 {
    use statrs::distribution::Normal;
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{DiscreteCDF, Poisson};

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_frequency() {
        let w = wilson_interval(9, 10);
        assert!(w.lo < 0.9 && 0.9 < w.hi);
        assert!(w.lo > 0.5 && w.hi < 1.0);
        let all = wilson_interval(10, 10);
        assert!(all.hi == 1.0 && all.lo > 0.69);
    }

    #[test]
    fn poisson_cdf_matches_statrs() {
        for &lambda in &[0.5, 1.0, 10.0, 100.0] {
            let d = Poisson::new(lambda).unwrap();
            for k in [0i64, 1, 3, 9, 15, 95, 130] {
                let mine = poisson_cdf(lambda, k);
                let theirs = d.cdf(k as u64);
                assert!(
                    (mine - theirs).abs() < 1e-10,
                    "lambda={lambda} k={k}: {mine} vs {theirs}"
                );
            }
        }
    }

    #[test]
    fn ks_rejects_wrong_law_accepts_right_law() {
        // Deterministic golden-ratio low-discrepancy sequence mapped through
        // the inverse cdf: should look like Exp(1) to KS.
        let mut u = 0.5f64;
        let mut xs = Vec::new();
        for _ in 0..2000 {
            u = (u + 0.618_033_988_749_894_9) % 1.0;
            xs.push(-(1.0 - u).ln());
        }
        assert!(ks_test_exp1(&xs).p_value > 0.1);
        let ys: Vec<f64> = xs.iter().map(|x| x * 2.0).collect();
        assert!(ks_test_exp1(&ys).p_value < 0.001);
    }

    #[test]
    fn chi_square_pools_small_bins() {
        let expected = vec![50.0, 30.0, 15.0, 4.0, 1.0];
        let observed = vec![52.0, 29.0, 14.0, 4.0, 1.0];
        let t = chi_square_gof(&observed, &expected, 5.0, 0).unwrap();
        assert_eq!(t.bins, 4);
        assert!(t.p_value > 0.5);
    }
}
