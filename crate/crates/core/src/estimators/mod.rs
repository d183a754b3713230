//! Correlation-image reconstruction and figures of merit.
//!
//! All reconstructions are of the form
//! `S_k(x) = Cov(N1 - k N2, n2(x))`, where `N1`, `N2` are the bucket sums of
//! the probe and reference frames and `n2(x)` is the reference pixel. The
//! protocols differ only in `k`: zero for plain GI, `mean(N1)/mean(N2)` for
//! differential GI, and `Cov(N1, N2)/Var(N2)` (the variance-minimizing value)
//! for the optimized variant.

pub mod moments;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::error::{Error, Result};
use crate::scene::PixelMask;
use crate::simulator::{stack_moments, FrameStack, SourceParams};

pub use moments::{BucketLayout, PairMoments, TileRect};

/// Reconstruction protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Protocol {
    Gi,
    Dgi,
    /// Fixed user-supplied coefficient.
    Sk(f64),
    Odgi,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Gi => "gi",
            Protocol::Dgi => "dgi",
            Protocol::Sk(_) => "sk",
            Protocol::Odgi => "odgi",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Sk(k) => write!(f, "sk={k}"),
            p => f.write_str(p.name()),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// `gi`, `dgi`, `odgi` or `sk=<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "gi" => Ok(Protocol::Gi),
            "dgi" => Ok(Protocol::Dgi),
            "odgi" => Ok(Protocol::Odgi),
            _ => {
                let k = lower
                    .strip_prefix("sk=")
                    .ok_or_else(|| Error::invalid(format!("unknown protocol `{s}`")))?;
                let k: f64 = k
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad coefficient in `{s}`")))?;
                if !k.is_finite() {
                    return Err(Error::invalid(format!("coefficient must be finite, got {k}")));
                }
                Ok(Protocol::Sk(k))
            }
        }
    }
}

/// Where the optimized protocol takes its coefficient from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KSource {
    /// `Cov(N1, N2) / Var(N2)` measured on the same frames.
    #[default]
    Empirical,
    /// Closed-form optimum for calibrated source parameters, with the mean
    /// transmission estimated as `mean(N1) / mean(N2)`.
    Analytic(SourceParams),
}

/// A reconstructed image.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    width: usize,
    height: usize,
    values: Vec<f64>,
    protocol: Protocol,
    k_used: Vec<f64>,
    frames_used: usize,
    tiles: Vec<TileRect>,
    grid: (usize, usize),
}

impl Reconstruction {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    /// Coefficient of the first (for untiled images, the only) region.
    pub fn k_used(&self) -> f64 {
        self.k_used[0]
    }

    /// Coefficient used in every tile, row-major over the tile grid.
    pub fn tile_k(&self) -> &[f64] {
        &self.k_used
    }

    pub fn tiles(&self) -> &[TileRect] {
        &self.tiles
    }

    pub fn tile_grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn frames_used(&self) -> usize {
        self.frames_used
    }
}

/// Per-frame sum of `stack` over `roi`.
pub fn bucket_series(stack: &FrameStack, roi: &PixelMask) -> Result<Vec<f64>> {
    roi.check_grid(stack.width(), stack.height(), "roi")?;
    let idx = roi.indices();
    if idx.is_empty() {
        return Err(Error::invalid("bucket region is empty"));
    }
    Ok((0..stack.frames())
        .map(|h| {
            let f = stack.frame(h);
            idx.iter().map(|&i| f[i]).sum()
        })
        .collect())
}

fn region_k(m: &PairMoments, region: usize, protocol: Protocol, source: KSource) -> Result<f64> {
    match protocol {
        Protocol::Gi => Ok(0.0),
        Protocol::Sk(k) => Ok(k),
        Protocol::Dgi => {
            let n2 = m.bucket_mean2(region);
            if n2 == 0.0 {
                return Err(Error::Degenerate("mean reference bucket is zero".into()));
            }
            Ok(m.bucket_mean1(region) / n2)
        }
        Protocol::Odgi => match source {
            KSource::Empirical => empirical_k_region(m, region),
            KSource::Analytic(params) => {
                let n2 = m.bucket_mean2(region);
                if n2 == 0.0 {
                    return Err(Error::Degenerate("mean reference bucket is zero".into()));
                }
                let t_bar = (m.bucket_mean1(region) / n2).clamp(0.0, 1.0);
                Ok(analytic_k(&params, t_bar))
            }
        },
    }
}

/// Reconstruct from accumulated moments; every bucket region gets its own
/// coefficient.
pub fn reconstruct_moments(m: &PairMoments, protocol: Protocol, source: KSource) -> Result<Reconstruction> {
    m.require_frames(2)?;
    let layout = m.layout();
    let ks = (0..layout.regions())
        .map(|r| region_k(m, r, protocol, source))
        .collect::<Result<Vec<f64>>>()?;
    let values = (0..m.pixels())
        .map(|i| {
            let k = ks[layout.region_of(i)];
            if k == 0.0 {
                m.cov_bucket1(i)
            } else {
                m.cov_bucket1(i) - k * m.cov_bucket2(i)
            }
        })
        .collect();
    Ok(Reconstruction {
        width: m.width(),
        height: m.height(),
        values,
        protocol,
        k_used: ks,
        frames_used: m.frames(),
        tiles: layout.tile_rects().to_vec(),
        grid: layout.grid(),
    })
}

/// Whole-field reconstruction.
pub fn reconstruct(
    probe: &FrameStack,
    reference: &FrameStack,
    protocol: Protocol,
    source: KSource,
) -> Result<Reconstruction> {
    let layout = Arc::new(BucketLayout::single(probe.width(), probe.height()));
    let m = stack_moments(probe, reference, layout)?;
    reconstruct_moments(&m, protocol, source)
}

/// Independent reconstruction of each tile of a `rows x cols` tiling, with
/// bucket signals restricted to the tile.
pub fn tiled_reconstruct(
    probe: &FrameStack,
    reference: &FrameStack,
    protocol: Protocol,
    source: KSource,
    rows: usize,
    cols: usize,
) -> Result<Reconstruction> {
    let layout = Arc::new(BucketLayout::tiles(probe.width(), probe.height(), rows, cols)?);
    let m = stack_moments(probe, reference, layout)?;
    reconstruct_moments(&m, protocol, source)
}

fn empirical_k_region(m: &PairMoments, region: usize) -> Result<f64> {
    m.require_frames(2)?;
    let v = m.bucket_var2(region);
    if !(v > 0.0) {
        return Err(Error::Degenerate("reference bucket has zero variance".into()));
    }
    Ok(m.bucket_cov(region) / v)
}

/// `Cov(N1, N2) / Var(N2)` over the whole field.
pub fn empirical_k(probe: &FrameStack, reference: &FrameStack) -> Result<f64> {
    let layout = Arc::new(BucketLayout::single(probe.width(), probe.height()));
    let m = stack_moments(probe, reference, layout)?;
    empirical_k_moments(&m)
}

/// Whole-field optimal coefficient from moments accumulated with a single
/// bucket region.
pub fn empirical_k_moments(m: &PairMoments) -> Result<f64> {
    if m.layout().regions() != 1 {
        return Err(Error::invalid("expected a single bucket region"));
    }
    empirical_k_region(m, 0)
}

/// Closed-form optimal coefficient, see [`analytic::k_opt`].
pub fn analytic_k(params: &SourceParams, t_bar: f64) -> f64 {
    analytic::k_opt(params, t_bar).k
}

/// Contrast-to-noise of a reconstruction between two regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// `|mean_plus - mean_minus| / sqrt(var_plus + var_minus)`; infinite
    /// when both variances vanish.
    pub snr: f64,
    pub mean_plus: f64,
    pub mean_minus: f64,
    pub var_plus: f64,
    pub var_minus: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    /// Both regions were constant, so the ratio is not meaningful.
    pub degenerate: bool,
}

fn region_stats(values: &[f64], mask: &PixelMask) -> (f64, f64, usize) {
    let idx = mask.indices();
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var, idx.len())
}

pub fn measure_snr(recon: &Reconstruction, plus: &PixelMask, minus: &PixelMask) -> Result<SnrReport> {
    measure_snr_values(recon.width, recon.height, &recon.values, plus, minus)
}

/// [`measure_snr`] on a bare row-major image.
pub fn measure_snr_values(
    width: usize,
    height: usize,
    values: &[f64],
    plus: &PixelMask,
    minus: &PixelMask,
) -> Result<SnrReport> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} image with {} values",
            values.len()
        )));
    }
    plus.check_grid(width, height, "plus mask")?;
    minus.check_grid(width, height, "minus mask")?;
    for (name, m) in [("plus", plus), ("minus", minus)] {
        if m.count() < 2 {
            return Err(Error::RegionTooSmall {
                name,
                size: m.count(),
                needed: 2,
            });
        }
    }
    if plus.intersects(minus) {
        return Err(Error::invalid("plus and minus masks overlap"));
    }
    let (mean_plus, var_plus, n_plus) = region_stats(values, plus);
    let (mean_minus, var_minus, n_minus) = region_stats(values, minus);
    let pooled = var_plus + var_minus;
    let degenerate = pooled == 0.0;
    let snr = if degenerate {
        f64::INFINITY
    } else {
        (mean_plus - mean_minus).abs() / pooled.sqrt()
    };
    Ok(SnrReport {
        snr,
        mean_plus,
        mean_minus,
        var_plus,
        var_minus,
        n_plus,
        n_minus,
        degenerate,
    })
}

/// Noise reduction factor averaged over the pixel pairs of a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfReport {
    pub nrf: f64,
    /// Standard error of the mean over pairs.
    pub std_error: f64,
    pub pairs: usize,
}

impl NrfReport {
    /// The region shows sub-shot-noise correlation at three standard errors.
    pub fn is_non_classical(&self) -> bool {
        self.nrf + 3.0 * self.std_error < 1.0
    }
}

pub fn measure_nrf(probe: &FrameStack, reference: &FrameStack, region: &PixelMask) -> Result<NrfReport> {
    let layout = Arc::new(BucketLayout::single(probe.width(), probe.height()));
    let m = stack_moments(probe, reference, layout)?;
    nrf_from_moments(&m, region)
}

pub fn nrf_from_moments(m: &PairMoments, region: &PixelMask) -> Result<NrfReport> {
    m.require_frames(2)?;
    m.check_mask(region, "region")?;
    let idx = region.indices();
    if idx.len() < 2 {
        return Err(Error::RegionTooSmall {
            name: "region",
            size: idx.len(),
            needed: 2,
        });
    }
    let per_pair = idx
        .iter()
        .map(|&i| {
            let sum = m.mean_probe(i) + m.mean_ref(i);
            if !(sum > 0.0) {
                return Err(Error::Degenerate(format!("pixel {i} has no mean signal")));
            }
            let var_diff = m.var_probe(i) + m.var_ref(i) - 2.0 * m.cov_pair(i);
            Ok(var_diff / sum)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (nrf, std_error) = mean_and_se(&per_pair);
    Ok(NrfReport {
        nrf,
        std_error,
        pairs: per_pair.len(),
    })
}

/// Mean and standard error of the mean (sample sd / sqrt(n)).
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
