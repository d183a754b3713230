//! Binomial sampling used for photon thinning.
//!
//! Exact sampling below [`GAUSSIAN_THRESHOLD`] trials: sequential inversion
//! when the mean is small, Hörmann's transformed rejection with squeeze (BTRS)
//! otherwise. At or above the threshold a rounded, clamped normal draw is used.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

/// Trial counts at or above this use the normal approximation.
pub const GAUSSIAN_THRESHOLD: u64 = 10_000;

/// Below this value of `n * min(p, 1 - p)` inversion beats rejection.
const INVERSION_MEAN_LIMIT: f64 = 10.0;

/// Draw from Binomial(n, p). `p` must lie in `[0, 1]`.
#[inline]
pub fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    debug_assert!((0.0..=1.0).contains(&p), "probability {p} out of range");
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n >= GAUSSIAN_THRESHOLD {
        return sample_normal_approx(n, p, rng);
    }
    sample_binomial_exact(n, p, rng)
}

/// Exact Binomial(n, p) draw regardless of `n`.
pub fn sample_binomial_exact<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let (p_small, flipped) = if p > 0.5 { (1.0 - p, true) } else { (p, false) };
    let k = if n as f64 * p_small < INVERSION_MEAN_LIMIT {
        inversion(n, p_small, rng)
    } else {
        btrs(n, p_small, rng)
    };
    if flipped {
        n - k
    } else {
        k
    }
}

fn sample_normal_approx<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let nf = n as f64;
    let mean = nf * p;
    let sd = (mean * (1.0 - p)).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    // continuity: round to the nearest integer, then clamp to the support
    (mean + sd * z + 0.5).floor().clamp(0.0, nf) as u64
}

fn inversion<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let q = 1.0 - p;
    let s = p / q;
    let a = (n as f64 + 1.0) * s;
    let r0 = (n as f64 * (-p).ln_1p()).exp();
    loop {
        let mut r = r0;
        let mut u: f64 = rng.random();
        let mut x = 0u64;
        while u > r {
            u -= r;
            x += 1;
            if x > n {
                break;
            }
            r *= a / x as f64 - s;
        }
        if x <= n {
            return x;
        }
    }
}

/// Below this `ln(k!)` is summed exactly; above it the Stirling series is
/// accurate to better than 1e-20.
const STIRLING_FROM: usize = 256;

/// `ln(k!)` is tabulated for every trial count that reaches exact sampling.
const LN_FACT_TABLE: usize = GAUSSIAN_THRESHOLD as usize + 1;

fn stirling_ln_factorial(k: f64) -> f64 {
    let r = 1.0 / k;
    let r2 = r * r;
    k * k.ln() - k + 0.5 * (std::f64::consts::TAU * k).ln()
        + r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 / 1260.0))
}

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACT_TABLE];
        for k in 1..LN_FACT_TABLE {
            t[k] = if k < STIRLING_FROM {
                t[k - 1] + (k as f64).ln()
            } else {
                stirling_ln_factorial(k as f64)
            };
        }
        t
    })
}

/// `ln(k!)` for integral `k >= 0`.
#[inline]
pub(crate) fn ln_factorial(k: f64) -> f64 {
    if k < LN_FACT_TABLE as f64 {
        ln_factorial_table()[k as usize]
    } else {
        stirling_ln_factorial(k)
    }
}

fn btrs<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let nf = n as f64;
    let q = 1.0 - p;
    let spq = (nf * p * q).sqrt();
    let b = 1.15 + 2.53 * spq;
    let a = -0.0873 + 0.0248 * b + 0.01 * p;
    let c = nf * p + 0.5;
    let v_r = 0.92 - 4.2 / b;
    let alpha = (2.83 + 5.1 / b) * spq;
    let lpq = (p / q).ln();
    let m = ((nf + 1.0) * p).floor();
    let h = ln_factorial(m) + ln_factorial(nf - m);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + c).floor();
        if k < 0.0 || k > nf {
            continue;
        }
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        let v = (v * alpha / (a / (us * us) + b)).ln();
        if v <= h - ln_factorial(k) - ln_factorial(nf - k) + (k - m) * lpq {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statcore::rng::RngStream;
    use statrs::distribution::{Binomial, Discrete};
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn ln_factorial_matches_ln_gamma() {
        for k in [0u64, 1, 2, 10, 255, 256, 257, 1000, 12_345, 9_999_999] {
            let k = k as f64;
            let exact = ln_gamma(k + 1.0);
            assert!((ln_factorial(k) - exact).abs() <= 1e-12 * exact.abs().max(1.0), "k={k}");
        }
    }

    /// Pearson chi-square of `draws` samples against the exact pmf, pooling
    /// sparse tail cells. Returns (statistic, degrees of freedom).
    fn chi_square(n: u64, p: f64, draws: usize, exact_only: bool) -> (f64, usize) {
        let mut rng = RngStream::from_key(99, n ^ p.to_bits());
        let mut counts = vec![0u64; n as usize + 1];
        for _ in 0..draws {
            let k = if exact_only {
                sample_binomial_exact(n, p, &mut rng)
            } else {
                sample_binomial(n, p, &mut rng)
            };
            counts[k as usize] += 1;
        }
        let pmf = Binomial::new(p, n).unwrap();
        let mut stat = 0.0;
        let mut cells = 0;
        let mut pooled_obs = 0.0;
        let mut pooled_exp = 0.0;
        for k in 0..=n {
            pooled_obs += counts[k as usize] as f64;
            pooled_exp += pmf.pmf(k) * draws as f64;
            if pooled_exp >= 20.0 {
                stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
                cells += 1;
                pooled_obs = 0.0;
                pooled_exp = 0.0;
            }
        }
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            cells += 1;
        }
        (stat, cells - 1)
    }

    fn assert_fits(n: u64, p: f64) {
        let (stat, dof) = chi_square(n, p, 400_000, true);
        // mean dof, sd sqrt(2 dof): allow 6 sd
        let limit = dof as f64 + 6.0 * (2.0 * dof as f64).sqrt();
        assert!(stat < limit, "n={n} p={p}: chi2={stat:.1} dof={dof}");
    }

    #[test]
    fn inversion_branch_matches_pmf() {
        assert_fits(20, 0.1);
        assert_fits(1000, 0.004);
        assert_fits(7, 0.9);
    }

    #[test]
    fn rejection_branch_matches_pmf() {
        assert_fits(100, 0.3);
        assert_fits(1250, 0.8);
        assert_fits(1250, 0.5);
        assert_fits(9999, 0.794);
    }

    #[test]
    fn trivial_probabilities() {
        let mut rng = RngStream::from_key(1, 2);
        assert_eq!(sample_binomial(500, 0.0, &mut rng), 0);
        assert_eq!(sample_binomial(500, 1.0, &mut rng), 500);
        assert_eq!(sample_binomial(0, 0.4, &mut rng), 0);
        assert_eq!(sample_binomial(50_000, 1.0, &mut rng), 50_000);
    }

    #[test]
    fn normal_approximation_agrees_with_exact_at_threshold() {
        // just below the crossover (exact) and at it (approximate): same moments
        let p = 0.3;
        let draws = 200_000;
        let moments = |n: u64, exact: bool| {
            let mut rng = RngStream::from_key(3, n + exact as u64);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..draws {
                let k = if exact {
                    sample_binomial_exact(n, p, &mut rng)
                } else {
                    sample_binomial(n, p, &mut rng)
                } as f64;
                s += k;
                s2 += k * k;
            }
            let mean = s / draws as f64;
            (mean, s2 / draws as f64 - mean * mean)
        };
        let n = GAUSSIAN_THRESHOLD;
        let var_true = n as f64 * p * (1.0 - p);
        let (m_exact, v_exact) = moments(n - 1, true);
        let (m_approx, v_approx) = moments(n, false);
        let se_mean = (var_true / draws as f64).sqrt();
        let se_var = var_true * (2.0 / draws as f64).sqrt();
        assert!((m_exact - (n - 1) as f64 * p).abs() < 5.0 * se_mean);
        assert!((m_approx - n as f64 * p).abs() < 5.0 * se_mean);
        assert!((v_exact - var_true).abs() < 5.0 * se_var);
        // rounding adds 1/12 to the variance, far below the tolerance
        assert!((v_approx - var_true).abs() < 5.0 * se_var);
    }
}
