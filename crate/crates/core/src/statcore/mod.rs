//! Sampling kernels for correlated photon counts.
//!
//! A source emits a multi-mode thermal number of photons (or photon pairs)
//! per pixel and frame. Detection is modelled by thinning that shared count
//! into the two arms, then adding Gaussian read noise.

pub mod binomial;
pub mod rng;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};

pub use binomial::{sample_binomial, GAUSSIAN_THRESHOLD};
pub use rng::{derive_seed, Channel, RngStream, StreamId};

/// Brightness per mode at or below which the count is drawn as Poisson.
/// The neglected excess `mu / M` is then below 1e-3 of the variance.
pub const POISSON_BRIGHTNESS_LIMIT: f64 = 1e-3;

/// Mean count above which a rounded normal draw replaces the exact law.
pub const GAUSSIAN_MEAN_LIMIT: f64 = 1e5;

/// The normal shortcut also needs a nearly symmetric law: the skewness of the
/// gamma-Poisson mixture is close to `2 / sqrt(M)` once `mu >> M`.
pub const GAUSSIAN_MIN_MODES: f64 = 1e4;

/// Multi-mode thermal statistics of the photons generated in one pixel and frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeStatistics {
    mean_photons_per_mode: f64,
    modes: f64,
}

impl ModeStatistics {
    pub fn new(mean_photons_per_mode: f64, modes: f64) -> Result<Self> {
        if !(mean_photons_per_mode >= 0.0 && mean_photons_per_mode.is_finite()) {
            return Err(Error::invalid(format!(
                "mean photons per mode must be finite and >= 0, got {mean_photons_per_mode}"
            )));
        }
        if !(modes >= 1.0 && modes.is_finite()) {
            return Err(Error::invalid(format!("mode count must be >= 1, got {modes}")));
        }
        Ok(Self {
            mean_photons_per_mode,
            modes,
        })
    }

    /// Statistics with total mean `mean` spread over `modes` modes.
    pub fn with_total_mean(mean: f64, modes: f64) -> Result<Self> {
        if !(modes >= 1.0 && modes.is_finite()) {
            return Err(Error::invalid(format!("mode count must be >= 1, got {modes}")));
        }
        Self::new(mean / modes, modes)
    }

    pub fn mean_photons_per_mode(&self) -> f64 {
        self.mean_photons_per_mode
    }

    pub fn modes(&self) -> f64 {
        self.modes
    }

    /// Total mean count `M * n`.
    pub fn mean(&self) -> f64 {
        self.modes * self.mean_photons_per_mode
    }

    /// `mu (1 + mu / M)`.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        mu * (1.0 + self.mean_photons_per_mode)
    }

    pub fn sampler(&self) -> GeneratedCountSampler {
        GeneratedCountSampler::new(*self)
    }
}

#[derive(Debug, Clone, Copy)]
enum CountLaw {
    Zero,
    Poisson(Poisson<f64>),
    NegativeBinomial(Gamma<f64>),
    Normal { mean: f64, sd: f64 },
}

/// Pre-built sampler for [`ModeStatistics`]; construct once, draw many times.
#[derive(Debug, Clone, Copy)]
pub struct GeneratedCountSampler {
    law: CountLaw,
}

impl GeneratedCountSampler {
    pub fn new(stats: ModeStatistics) -> Self {
        let mu = stats.mean();
        let law = if mu <= 0.0 {
            CountLaw::Zero
        } else if mu > GAUSSIAN_MEAN_LIMIT && stats.modes >= GAUSSIAN_MIN_MODES {
            CountLaw::Normal {
                mean: mu,
                sd: stats.variance().sqrt(),
            }
        } else if stats.mean_photons_per_mode <= POISSON_BRIGHTNESS_LIMIT {
            CountLaw::Poisson(Poisson::new(mu).expect("positive finite mean"))
        } else {
            // gamma-Poisson mixture: shape M, scale mu / M
            CountLaw::NegativeBinomial(
                Gamma::new(stats.modes, stats.mean_photons_per_mode).expect("validated shape"),
            )
        };
        Self { law }
    }

    /// Name of the sampling regime, for diagnostics.
    pub fn regime(&self) -> &'static str {
        match self.law {
            CountLaw::Zero => "zero",
            CountLaw::Poisson(_) => "poisson",
            CountLaw::NegativeBinomial(_) => "negative-binomial",
            CountLaw::Normal { .. } => "normal",
        }
    }
}

impl Distribution<u64> for GeneratedCountSampler {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.law {
            CountLaw::Zero => 0,
            CountLaw::Poisson(p) => p.sample(rng) as u64,
            CountLaw::NegativeBinomial(g) => {
                let lambda = g.sample(rng);
                if lambda > 0.0 {
                    Poisson::new(lambda).map_or(0, |p| p.sample(rng) as u64)
                } else {
                    0
                }
            }
            CountLaw::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (mean + sd * z + 0.5).floor().max(0.0) as u64
            }
        }
    }
}

/// Draw the number of generated photons (or pairs) for one pixel and frame.
pub fn sample_generated_count<R: Rng + ?Sized>(stats: &ModeStatistics, rng: &mut R) -> u64 {
    stats.sampler().sample(rng)
}

/// Route each of `g` shared photons independently into arm 1 with
/// probability `p1` and into arm 2 with probability `p2`.
///
/// This is the twin-beam detection model: both arms see every pair, and the
/// losses in the two arms are independent.
///
/// # Panics
/// If either probability is outside `[0, 1]`.
#[inline]
pub fn thin_independent<R: Rng + ?Sized>(g: u64, p1: f64, p2: f64, rng: &mut R) -> (u64, u64) {
    assert!(
        (0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2),
        "thinning probabilities must lie in [0, 1], got {p1}, {p2}"
    );
    (sample_binomial(g, p1, rng), sample_binomial(g, p2, rng))
}

/// Route each of `g` photons to arm 1 (`q1`), arm 2 (`q2`) or loss.
///
/// This is the split-thermal model: a photon ends up in at most one arm.
pub fn thin_partition<R: Rng + ?Sized>(g: u64, q1: f64, q2: f64, rng: &mut R) -> Result<(u64, u64)> {
    check_partition(q1, q2)?;
    Ok(thin_partition_unchecked(g, q1, q2, rng))
}

pub(crate) fn check_partition(q1: f64, q2: f64) -> Result<()> {
    if !((0.0..=1.0).contains(&q1) && (0.0..=1.0).contains(&q2)) {
        return Err(Error::invalid(format!(
            "routing probabilities must lie in [0, 1], got {q1}, {q2}"
        )));
    }
    if q1 + q2 > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "routing probabilities sum to {} > 1",
            q1 + q2
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn thin_partition_unchecked<R: Rng + ?Sized>(
    g: u64,
    q1: f64,
    q2: f64,
    rng: &mut R,
) -> (u64, u64) {
    let d1 = sample_binomial(g, q1, rng);
    let d2 = if q1 >= 1.0 {
        0
    } else {
        sample_binomial(g - d1, (q2 / (1.0 - q1)).min(1.0), rng)
    };
    (d1, d2)
}

/// Analog readout: the count plus zero-mean Gaussian noise of rms `delta_el`.
#[inline]
pub fn add_electronic_noise<R: Rng + ?Sized>(d: u64, delta_el: f64, rng: &mut R) -> f64 {
    if delta_el == 0.0 {
        return d as f64;
    }
    let z: f64 = rng.sample(StandardNormal);
    d as f64 + delta_el * z
}


#[cfg(test)]
mod tests {
    use super::testutil::{covariance, describe};
    use super::*;

    fn rng(key: u64) -> RngStream {
        RngStream::from_key(2024, key)
    }

    fn draws(stats: ModeStatistics, n: usize, key: u64) -> Vec<f64> {
        let s = stats.sampler();
        let mut r = rng(key);
        (0..n).map(|_| s.sample(&mut r) as f64).collect()
    }

    #[test]
    fn zero_mean_source_emits_nothing() {
        let stats = ModeStatistics::new(0.0, 10.0).unwrap();
        let mut r = rng(0);
        assert!((0..1000).all(|_| sample_generated_count(&stats, &mut r) == 0));
    }

    #[test]
    fn rejects_invalid_statistics() {
        assert!(ModeStatistics::new(-1.0, 5.0).is_err());
        assert!(ModeStatistics::new(1.0, 0.5).is_err());
        assert!(ModeStatistics::new(f64::NAN, 5.0).is_err());
    }

    #[test]
    fn regime_selection() {
        let r = |mu: f64, m: f64| ModeStatistics::with_total_mean(mu, m).unwrap().sampler().regime();
        assert_eq!(r(0.0, 1.0), "zero");
        assert_eq!(r(1250.0, 5e10), "poisson");
        assert_eq!(r(1250.0, 1e3), "negative-binomial");
        assert_eq!(r(2e5, 1e3), "negative-binomial");
        assert_eq!(r(2e5, 1e5), "normal");
    }

    #[test]
    fn poisson_limit_has_unit_fano_factor() {
        // oracle: a direct Poisson sampler with the same mean
        let n = 1_000_000;
        let sim = describe(&draws(
            ModeStatistics::with_total_mean(1250.0, 5e10).unwrap(),
            n,
            1,
        ));
        let oracle: Vec<f64> = {
            let p = Poisson::new(1250.0).unwrap();
            let mut r = rng(2);
            (0..n).map(|_| p.sample(&mut r)).collect()
        };
        let oracle = describe(&oracle);
        for s in [&sim, &oracle] {
            let fano = s.var / s.mean;
            // se of var/mean is dominated by se_var / mean
            let se = s.se_var / s.mean;
            assert!((fano - 1.0).abs() < 5.0 * se, "fano {fano} se {se}");
        }
        let se = (sim.se_var.powi(2) + oracle.se_var.powi(2)).sqrt();
        assert!((sim.var - oracle.var).abs() < 5.0 * se);
    }

    #[test]
    fn single_mode_is_geometric() {
        // brute-force oracle: moments of the geometric pmf by enumeration
        let mu: f64 = 2.0;
        let r = mu / (1.0 + mu);
        let (mut m1, mut m2, mut pk) = (0.0, 0.0, 1.0 / (1.0 + mu));
        for k in 0..2000 {
            let k = k as f64;
            m1 += k * pk;
            m2 += k * k * pk;
            pk *= r;
        }
        let exact_var = m2 - m1 * m1;
        assert!((exact_var - 6.0).abs() < 1e-9);

        let s = describe(&draws(ModeStatistics::new(2.0, 1.0).unwrap(), 1_000_000, 3));
        assert!((s.mean - m1).abs() < 5.0 * s.se_mean, "mean {}", s.mean);
        assert!((s.var - exact_var).abs() < 5.0 * s.se_var, "var {}", s.var);
    }

    #[test]
    fn moments_match_over_parameter_grid() {
        let mut key = 10;
        for &mu in &[0.5, 10.0, 1250.0, 2.0e5] {
            for &m in &[1.0, 3.0, 1e3, 5e10] {
                let stats = ModeStatistics::with_total_mean(mu, m).unwrap();
                key += 1;
                let s = describe(&draws(stats, 1_000_000, key));
                assert!(
                    (s.mean - stats.mean()).abs() < 5.0 * s.se_mean,
                    "mu={mu} M={m}: mean {} vs {}",
                    s.mean,
                    stats.mean()
                );
                assert!(
                    (s.var - stats.variance()).abs() < 5.0 * s.se_var,
                    "mu={mu} M={m}: var {} vs {} (se {})",
                    s.var,
                    stats.variance(),
                    s.se_var
                );
            }
        }
    }

    #[test]
    fn independent_thinning_edge_cases() {
        let mut r = rng(20);
        for g in [0u64, 1, 17, 5000, 20_000] {
            assert_eq!(thin_independent(g, 0.0, 0.7, &mut r).0, 0);
            assert_eq!(thin_independent(g, 1.0, 1.0, &mut r), (g, g));
        }
    }

    #[test]
    #[should_panic]
    fn independent_thinning_rejects_bad_probability() {
        thin_independent(10, 1.5, 0.2, &mut rng(0));
    }

    #[test]
    fn independent_thinning_reproduces_twin_beam_covariance() {
        // n2 = 1000 detected at eta = 0.8 means 1250 pairs per pixel and frame
        let n2: f64 = 1000.0;
        let modes = 5e10;
        let eta = 0.8;
        let stats = ModeStatistics::with_total_mean(n2 / eta, modes).unwrap();
        let sampler = stats.sampler();
        let n = 10_000_000;
        let mut r = rng(21);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for _ in 0..n {
            let g = sampler.sample(&mut r);
            let (a, b) = thin_independent(g, eta, eta, &mut r);
            d1.push(a as f64);
            d2.push(b as f64);
        }
        let expected = n2 * n2 / modes + eta * n2;
        assert!((expected - 800.00002).abs() < 1e-9);
        let (cov, se) = covariance(&d1, &d2);
        assert!((cov - expected).abs() < 5.0 * se, "cov {cov} se {se}");
        // marginals: E[d1] = p E[G], Var(d1) = p^2 Var(G) + p (1 - p) E[G]
        let s = describe(&d1);
        let var_theory = eta * eta * stats.variance() + eta * (1.0 - eta) * stats.mean();
        assert!((s.mean - eta * stats.mean()).abs() < 5.0 * s.se_mean);
        assert!((s.var - var_theory).abs() < 5.0 * s.se_var);
    }

    #[test]
    fn partition_rejects_oversubscribed_routing() {
        let mut r = rng(30);
        assert!(thin_partition(10, 0.6, 0.5, &mut r).is_err());
        assert!(thin_partition(10, -0.1, 0.5, &mut r).is_err());
        assert!(thin_partition(10, 0.5, 0.5, &mut r).is_ok());
    }

    #[test]
    fn partition_with_empty_second_arm() {
        let mut r = rng(31);
        for g in [0, 3, 1000] {
            assert_eq!(thin_partition(g, 0.4, 0.0, &mut r).unwrap().1, 0);
        }
    }

    #[test]
    fn partition_of_poisson_source_is_uncorrelated() {
        let sampler = ModeStatistics::with_total_mean(50.0, 5e10).unwrap().sampler();
        let mut r = rng(32);
        let n = 1_000_000;
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (x, y) = thin_partition(sampler.sample(&mut r), 0.3, 0.3, &mut r).unwrap();
            a.push(x as f64);
            b.push(y as f64);
        }
        let (cov, se) = covariance(&a, &b);
        assert!(cov.abs() < 5.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn partition_of_single_mode_source() {
        // brute force over the compound geometric-multinomial law:
        // Cov = q1 q2 E[G(G-1)] - q1 q2 E[G]^2 = q1 q2 (Var G - E G)
        let mu: f64 = 4.0;
        let (q1, q2) = (0.25, 0.25);
        let r = mu / (1.0 + mu);
        let (mut eg, mut egg1, mut pk) = (0.0, 0.0, 1.0 / (1.0 + mu));
        for k in 0..4000 {
            let k = k as f64;
            eg += k * pk;
            egg1 += k * (k - 1.0) * pk;
            pk *= r;
        }
        let exact = q1 * q2 * (egg1 - eg * eg);
        assert!((exact - 1.0).abs() < 1e-9);

        let sampler = ModeStatistics::new(mu, 1.0).unwrap().sampler();
        let mut rs = rng(33);
        let n = 10_000_000;
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (x, y) = thin_partition(sampler.sample(&mut rs), q1, q2, &mut rs).unwrap();
            a.push(x as f64);
            b.push(y as f64);
        }
        let (cov, se) = covariance(&a, &b);
        assert!((cov - exact).abs() < 5.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn noiseless_readout_is_exact() {
        let mut r = rng(40);
        for d in [0, 1, 12345] {
            assert_eq!(add_electronic_noise(d, 0.0, &mut r), d as f64);
        }
    }

    #[test]
    fn read_noise_variance() {
        for (delta, key) in [(5.0, 41), (13.0, 42)] {
            let mut r = rng(key);
            let xs: Vec<f64> = (0..1_000_000)
                .map(|_| add_electronic_noise(0, delta, &mut r))
                .collect();
            let s = describe(&xs);
            assert!(s.mean.abs() < 5.0 * s.se_mean);
            assert!(
                (s.var - delta * delta).abs() < 5.0 * s.se_var,
                "delta {delta}: var {}",
                s.var
            );
        }
    }
}
