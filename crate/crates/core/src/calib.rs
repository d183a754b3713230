//! Channel-efficiency calibration.
//!
//! Two independent routes:
//!
//! * inversion of the twin-beam pair covariance on a fully transmitting
//!   region, `eta = Cov(n1, n2) / <n2> - <n2> / M`;
//! * a one-parameter weighted least-squares fit of the analytic SNR model to
//!   a measured SNR curve.

use std::sync::Arc;

use serde::Serialize;

use crate::analytic::{self, BinaryObject};
use crate::error::{Error, Result};
use crate::estimators::{mean_and_se, nrf_from_moments, BucketLayout, PairMoments, Protocol};
use crate::scene::PixelMask;
use crate::simulator::{stack_moments, FrameStack, SourceKind, SourceParams};

/// Minimum calibration region size.
pub const MIN_CALIBRATION_PIXELS: usize = 50;

/// Golden-section tolerance on `eta`.
pub const FIT_TOLERANCE: f64 = 1e-5;

/// Iteration budget of the golden-section search.
pub const FIT_MAX_ITERATIONS: usize = 200;

/// Smallest efficiency considered by the fit.
const ETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaEstimate {
    pub eta: f64,
    /// Standard error of the mean over pixel pairs.
    pub std_error: f64,
    pub pairs: usize,
}

/// Efficiency from the pair covariance of a unit-transmission region of a
/// twin-beam acquisition with `modes` modes per pixel.
pub fn estimate_eta_covariance(
    probe: &FrameStack,
    reference: &FrameStack,
    region: &PixelMask,
    modes: f64,
) -> Result<EtaEstimate> {
    let layout = Arc::new(BucketLayout::single(probe.width(), probe.height()));
    let m = stack_moments(probe, reference, layout)?;
    estimate_eta_moments(&m, region, modes)
}

/// As [`estimate_eta_covariance`], from accumulated moments.
///
/// Data without sub-shot-noise correlation on the region (the noise
/// reduction factor not below 1 by three standard errors) are rejected: the
/// covariance of split thermal light carries no efficiency information.
pub fn estimate_eta_moments(m: &PairMoments, region: &PixelMask, modes: f64) -> Result<EtaEstimate> {
    if !(modes >= 1.0) {
        return Err(Error::invalid(format!("M must be >= 1, got {modes}")));
    }
    m.require_frames(2)?;
    m.check_mask(region, "region")?;
    let idx = region.indices();
    if idx.len() < MIN_CALIBRATION_PIXELS {
        return Err(Error::RegionTooSmall {
            name: "calibration region",
            size: idx.len(),
            needed: MIN_CALIBRATION_PIXELS,
        });
    }
    let nrf = nrf_from_moments(m, region)?;
    if !nrf.is_non_classical() {
        return Err(Error::NotNonClassical {
            nrf: nrf.nrf,
            std_error: nrf.std_error,
        });
    }
    let per_pair: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let n2 = m.mean_ref(i);
            m.cov_pair(i) / n2 - n2 / modes
        })
        .collect();
    let (eta, std_error) = mean_and_se(&per_pair);
    Ok(EtaEstimate {
        eta,
        std_error,
        pairs: idx.len(),
    })
}

/// What the abscissa of a measured SNR curve is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Low-transmission fraction `epsilon`; `t_plus`, `t_minus` fixed.
    SnrVsEps,
    /// Low transmission level `t_minus`; `epsilon`, `t_plus` fixed.
    SnrVsTminus,
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "snr-vs-eps" | "eps" | "epsilon" => Ok(CurveKind::SnrVsEps),
            "snr-vs-tminus" | "tminus" | "t-minus" => Ok(CurveKind::SnrVsTminus),
            other => Err(Error::invalid(format!("unknown curve kind `{other}`"))),
        }
    }
}

/// One measured point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub snr: f64,
    pub sigma: f64,
}

/// Everything the SNR model needs except the efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitModel {
    pub kind: SourceKind,
    pub n2: f64,
    pub modes: f64,
    pub delta_el: f64,
    pub n_pixels: f64,
    pub frames: f64,
    pub protocol: Protocol,
    /// Used for [`CurveKind::SnrVsTminus`].
    pub epsilon: f64,
    pub t_plus: f64,
    /// Used for [`CurveKind::SnrVsEps`].
    pub t_minus: f64,
}

impl FitModel {
    pub fn predict(&self, curve: CurveKind, x: f64, eta: f64) -> Result<f64> {
        let params = SourceParams::new(self.kind, self.n2, self.modes, eta, self.delta_el)?;
        let object = match curve {
            CurveKind::SnrVsEps => BinaryObject::new(x, self.t_plus, self.t_minus),
            CurveKind::SnrVsTminus => BinaryObject::new(self.epsilon, self.t_plus, x),
        };
        analytic::snr(&params, &object, self.n_pixels, self.frames, self.protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub x: f64,
    pub model: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub eta_hat: f64,
    pub std_error: f64,
    /// Weighted residual sum of squares at the optimum.
    pub residual_sum: f64,
    pub iterations: usize,
    /// The optimum sits at the edge of the allowed interval.
    pub at_boundary: bool,
    /// First-order 1-sigma band: model +- |d model / d eta| * std_error.
    pub band: Vec<BandPoint>,
}

fn chi2(points: &[CurvePoint], curve: CurveKind, model: &FitModel, eta: f64) -> Result<f64> {
    points.iter().try_fold(0.0, |acc, p| {
        let r = (p.snr - model.predict(curve, p.x, eta)?) / p.sigma;
        Ok(acc + r * r)
    })
}

/// Derivative of the model in `eta`, central where possible.
fn model_slope(model: &FitModel, curve: CurveKind, x: f64, eta: f64) -> Result<f64> {
    let h = 1e-5;
    let hi = (eta + h).min(1.0);
    let lo = (eta - h).max(ETA_FLOOR);
    Ok((model.predict(curve, x, hi)? - model.predict(curve, x, lo)?) / (hi - lo))
}

/// Fit the efficiency to measured SNR points.
pub fn fit_eta(points: &[CurvePoint], curve: CurveKind, model: &FitModel) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "at least 3 points are needed for a fit with an error estimate, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.sigma > 0.0 && p.sigma.is_finite() && p.snr.is_finite() && p.x.is_finite()))
    {
        return Err(Error::invalid(format!("bad curve point {p:?}")));
    }
    // coarse scan to bracket the global minimum
    const GRID: usize = 200;
    let grid: Vec<f64> = (0..=GRID)
        .map(|i| ETA_FLOOR + (1.0 - ETA_FLOOR) * i as f64 / GRID as f64)
        .collect();
    let values = grid
        .iter()
        .map(|&e| chi2(points, curve, model, e))
        .collect::<Result<Vec<f64>>>()?;
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = chi2(points, curve, model, c)?;
    let mut fd = chi2(points, curve, model, d)?;
    let mut iterations = 0;
    while b - a > FIT_TOLERANCE {
        if iterations == FIT_MAX_ITERATIONS {
            return Err(Error::NoConvergence { iterations });
        }
        iterations += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = chi2(points, curve, model, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = chi2(points, curve, model, d)?;
        }
    }
    let eta_hat = (0.5 * (a + b)).clamp(ETA_FLOOR, 1.0);
    let residual_sum = chi2(points, curve, model, eta_hat)?;

    // curvature of chi^2 in the Gauss-Newton form: 2 sum (dm/deta / sigma)^2
    let mut fisher = 0.0;
    for p in points {
        let s = model_slope(model, curve, p.x, eta_hat)? / p.sigma;
        fisher += s * s;
    }
    if !(fisher > 0.0 && fisher.is_finite()) {
        return Err(Error::Degenerate("model does not depend on eta at these points".into()));
    }
    let std_error = fisher.sqrt().recip();
    let at_boundary = eta_hat >= 1.0 - FIT_TOLERANCE || eta_hat <= grid[1];
    let band = points
        .iter()
        .map(|p| {
            let m = model.predict(curve, p.x, eta_hat)?;
            let half = model_slope(model, curve, p.x, eta_hat)?.abs() * std_error;
            Ok(BandPoint {
                x: p.x,
                model: m,
                lower: m - half,
                upper: m + half,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitResult {
        eta_hat,
        std_error,
        residual_sum,
        iterations,
        at_boundary,
        band,
    })
}
