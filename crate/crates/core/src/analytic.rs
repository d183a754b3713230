//! Closed-form predictions for the detection model used by the simulator.
//!
//! Per pixel pair with object transmission `t` (`b = n2 / M`):
//!
//! ```text
//! <n2> = n2                    Var(n2) = n2 (1 + b) + D^2
//! <n1> = t n2                  Var(n1) = t n2 (1 + t b) + D^2
//! Cov(n1, n2) = t n2 b                     split thermal
//! Cov(n1, n2) = t n2 (b + eta)             twin beam
//! ```
//!
//! Distinct pixels are independent. Everything else here — signal profiles,
//! reconstruction noise, SNR, optimal coefficients, NRF — is assembled from
//! these expressions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::Protocol;
use crate::scene::SceneStats;
use crate::simulator::{SourceKind, SourceParams};

/// Factor by which a limit condition must hold for the corresponding
/// simplified expression to be reported.
pub const REGIME_MARGIN: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    General,
    HighBrightness,
    LowBrightness,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::General => "general",
            Regime::HighBrightness => "high_brightness",
            Regime::LowBrightness => "low_brightness",
        })
    }
}

/// Brightness regime: high when `n2/M >= 1000`, low when
/// `n2/M <= eta / 1000` (for split thermal light, `n2/M <= 1/1000`).
pub fn classify_regime(params: &SourceParams) -> Regime {
    let b = params.brightness();
    let low_scale = match params.kind {
        SourceKind::Twin => params.eta,
        SourceKind::Thermal => 1.0,
    };
    if b >= REGIME_MARGIN {
        Regime::HighBrightness
    } else if b * REGIME_MARGIN <= low_scale {
        Regime::LowBrightness
    } else {
        Regime::General
    }
}

/// Single-pixel-pair moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMomentsPrediction {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
}

/// `n2^2 / M`, evaluated as `n2 * (n2 / M)` so huge `M` does not overflow
/// the intermediate square.
fn excess(params: &SourceParams, scale: f64) -> f64 {
    scale * params.n2 * (scale * params.brightness())
}

/// Covariance per unit transmission, `n2^2/M (+ eta n2 for twin beams)`.
pub fn covariance_per_transmission(params: &SourceParams) -> f64 {
    let classical = excess(params, 1.0);
    match params.kind {
        SourceKind::Twin => classical + params.eta * params.n2,
        SourceKind::Thermal => classical,
    }
}

fn probe_variance(params: &SourceParams, t: f64) -> f64 {
    t * params.n2 + excess(params, t) + params.delta_el * params.delta_el
}

fn reference_variance(params: &SourceParams) -> f64 {
    probe_variance(params, 1.0)
}

pub fn moments(params: &SourceParams, t: f64) -> PairMomentsPrediction {
    PairMomentsPrediction {
        mean1: t * params.n2,
        mean2: params.n2,
        var1: probe_variance(params, t),
        var2: reference_variance(params),
        cov: t * covariance_per_transmission(params),
    }
}

/// Expected reconstruction `S(x)` at a pixel of transmission `t` in a scene
/// with statistics `stats`. The optimized protocol uses [`k_opt`].
pub fn signal_profile(params: &SourceParams, stats: &SceneStats, t: f64, protocol: Protocol) -> f64 {
    let k = protocol_k(params, stats.t_bar, protocol);
    t * covariance_per_transmission(params) - k * reference_variance(params)
}

/// Expected coefficient of a protocol for a scene of mean transmission `t_bar`.
pub fn protocol_k(params: &SourceParams, t_bar: f64, protocol: Protocol) -> f64 {
    match protocol {
        Protocol::Gi => 0.0,
        Protocol::Dgi => t_bar,
        Protocol::Sk(k) => k,
        Protocol::Odgi => k_opt(params, t_bar).k,
    }
}

/// Bucket variances per frame for a scene of `n_pixels` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BucketMoments {
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
}

pub fn bucket_moments(params: &SourceParams, t_bar: f64, t2_bar: f64, n_pixels: f64) -> BucketMoments {
    let d2 = params.delta_el * params.delta_el;
    BucketMoments {
        var1: n_pixels * (params.n2 * t_bar + excess(params, 1.0) * t2_bar + d2),
        var2: n_pixels * reference_variance(params),
        cov: n_pixels * t_bar * covariance_per_transmission(params),
    }
}

/// Variance of `N1 - k N2`.
pub fn bucket_variance_k(b: &BucketMoments, k: f64) -> f64 {
    b.var1 + k * k * b.var2 - 2.0 * k * b.cov
}

/// Per-pixel variance of a reconstruction from `frames` frames:
/// `Var(N1 - k N2) Var(n2) / H`.
pub fn reconstruction_noise(
    params: &SourceParams,
    stats: &SceneStats,
    n_pixels: f64,
    frames: f64,
    k: f64,
) -> f64 {
    let b = bucket_moments(params, stats.t_bar, stats.t2_bar, n_pixels);
    bucket_variance_k(&b, k) * reference_variance(params) / frames
}

/// Two-level object: a fraction `epsilon` of the cells at `t_minus`, the rest
/// at `t_plus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryObject {
    pub epsilon: f64,
    pub t_plus: f64,
    pub t_minus: f64,
}

impl BinaryObject {
    pub fn new(epsilon: f64, t_plus: f64, t_minus: f64) -> Self {
        Self {
            epsilon,
            t_plus,
            t_minus,
        }
    }

    pub fn t_bar(&self) -> f64 {
        (1.0 - self.epsilon) * self.t_plus + self.epsilon * self.t_minus
    }

    pub fn t2_bar(&self) -> f64 {
        (1.0 - self.epsilon) * self.t_plus * self.t_plus + self.epsilon * self.t_minus * self.t_minus
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Degenerate(format!(
                "epsilon = {} leaves no contrast between two regions",
                self.epsilon
            )));
        }
        for (name, t) in [("t_plus", self.t_plus), ("t_minus", self.t_minus)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// Expected SNR of a reconstruction of a two-level object.
pub fn snr(
    params: &SourceParams,
    object: &BinaryObject,
    n_pixels: f64,
    frames: f64,
    protocol: Protocol,
) -> Result<f64> {
    object.validate()?;
    if !(n_pixels >= 1.0 && frames >= 2.0) {
        return Err(Error::invalid("need at least one pixel and two frames"));
    }
    let t_bar = object.t_bar();
    let b = bucket_moments(params, t_bar, object.t2_bar(), n_pixels);
    let k = protocol_k(params, t_bar, protocol);
    let noise = bucket_variance_k(&b, k) * reference_variance(params) / frames;
    let contrast = (object.t_plus - object.t_minus).abs() * covariance_per_transmission(params);
    Ok(contrast / (2.0 * noise).sqrt())
}

/// GI SNR for a fully absorbing / fully transmitting object without read
/// noise: `sqrt(H) (n2 + c M) / ((n2 + M) sqrt(2 N (1 - eps)))` with
/// `c = eta` for twin beams and `c = 0` for split thermal light.
pub fn snr_gi_closed_form(params: &SourceParams, epsilon: f64, n_pixels: f64, frames: f64) -> f64 {
    let c = match params.kind {
        SourceKind::Twin => params.eta,
        SourceKind::Thermal => 0.0,
    };
    frames.sqrt() * (params.n2 + c * params.modes)
        / ((params.n2 + params.modes) * (2.0 * n_pixels * (1.0 - epsilon)).sqrt())
}

/// SNR of DGI and optimized DGI relative to GI, for `t_plus = 1`,
/// `t_minus = 0` (independent of `H` and `N`).
pub fn snr_ratios(params: &SourceParams, epsilon: f64) -> Result<(f64, f64)> {
    let obj = BinaryObject::new(epsilon, 1.0, 0.0);
    let gi = snr(params, &obj, 1.0, 2.0, Protocol::Gi)?;
    let dgi = snr(params, &obj, 1.0, 2.0, Protocol::Dgi)?;
    let odgi = snr(params, &obj, 1.0, 2.0, Protocol::Odgi)?;
    Ok((dgi / gi, odgi / gi))
}

/// DGI/GI and optimized-DGI/GI ratio when `n2/M` is large.
pub fn ratio_high_brightness(epsilon: f64) -> f64 {
    1.0 / epsilon.sqrt()
}

/// DGI/GI ratio for twin beams when `n2/M` is negligible and there is no
/// read noise.
pub fn dgi_ratio_low_brightness(eta: f64, epsilon: f64) -> f64 {
    1.0 / (2.0 * (eta - 0.5) * (epsilon - 1.0) + 1.0).sqrt()
}

/// Optimized-DGI/GI ratio for twin beams when `n2/M` is negligible and there
/// is no read noise.
pub fn odgi_ratio_low_brightness(eta: f64, epsilon: f64) -> f64 {
    1.0 / (eta * eta * (epsilon - 1.0) + 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KOpt {
    /// Exact optimum `Cov(N1, N2) / Var(N2)`.
    pub k: f64,
    pub regime: Regime,
    /// The simplified limit expression, when a limit applies.
    pub limit: Option<f64>,
}

/// Coefficient minimizing `Var(N1 - k N2)`:
/// `n2 (n2 + M eta) t_bar / (n2^2 + M (n2 + D^2))` for twin beams, the same
/// without `M eta` for split thermal light.
pub fn k_opt(params: &SourceParams, t_bar: f64) -> KOpt {
    let d2 = params.delta_el * params.delta_el;
    // divide numerator and denominator by M to stay finite at huge M
    let b = params.brightness();
    let num = match params.kind {
        SourceKind::Twin => params.n2 * (b + params.eta) * t_bar,
        SourceKind::Thermal => params.n2 * b * t_bar,
    };
    let den = params.n2 * b + params.n2 + d2;
    let k = num / den;
    let regime = classify_regime(params);
    let limit = match (regime, params.kind) {
        (Regime::HighBrightness, _) => Some(t_bar),
        (Regime::LowBrightness, SourceKind::Twin) => {
            Some(params.n2 / (params.n2 + d2) * params.eta * t_bar)
        }
        (Regime::LowBrightness, SourceKind::Thermal) => Some(0.0),
        (Regime::General, _) => None,
    };
    KOpt { k, regime, limit }
}

/// Expected `Var(n1 - n2) / <n1 + n2>` for a pixel pair at transmission `t`.
pub fn nrf_prediction(params: &SourceParams, t: f64) -> f64 {
    let m = moments(params, t);
    (m.var1 + m.var2 - 2.0 * m.cov) / (m.mean1 + m.mean2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mean,
    Variance,
    Covariance,
    SignalProfile,
    Snr,
    KOpt,
    SnrRatio,
    Nrf,
}

/// A predicted value tagged with the conditions it was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticPrediction {
    pub quantity: Quantity,
    pub value: f64,
    pub regime: Regime,
    pub params: SourceParams,
    pub object: Option<BinaryObject>,
    pub frames: Option<f64>,
    pub n_pixels: Option<f64>,
}

/// SNR prediction with its context, as written next to measured values.
pub fn predict_snr(
    params: &SourceParams,
    object: &BinaryObject,
    n_pixels: f64,
    frames: f64,
    protocol: Protocol,
) -> Result<AnalyticPrediction> {
    Ok(AnalyticPrediction {
        quantity: Quantity::Snr,
        value: snr(params, object, n_pixels, frames, protocol)?,
        regime: classify_regime(params),
        params: *params,
        object: Some(*object),
        frames: Some(frames),
        n_pixels: Some(n_pixels),
    })
}
