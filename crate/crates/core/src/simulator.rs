//! Synthetic probe/reference frame stacks for twin-beam and split-thermal
//! sources.
//!
//! Per pixel and frame a shared count is drawn from multi-mode thermal
//! statistics and routed into the two arms:
//!
//! * twin beam: every pair feeds both arms; arm losses are independent
//!   (probe detected with probability `eta * t`, reference with `eta`);
//! * split thermal: each photon goes to at most one arm of a balanced
//!   splitter (probe `eta/2 * t`, reference `eta/2`).
//!
//! The source brightness is set so the reference pixel mean equals `n2` in
//! both cases. Read noise is added independently to every pixel of both
//! detectors.

use std::sync::Arc;

use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::moments::{frame_blocks, BucketLayout, FrameScratch, PairMoments};
use crate::scene::TransmissionMap;
use crate::statcore::{
    self, add_electronic_noise, sample_binomial, Channel, GeneratedCountSampler, ModeStatistics,
    RngStream, StreamId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Twin,
    Thermal,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SourceKind::Twin => "twin",
            SourceKind::Thermal => "thermal",
        })
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twin" => Ok(SourceKind::Twin),
            "thermal" => Ok(SourceKind::Thermal),
            other => Err(Error::invalid(format!("unknown source kind `{other}`"))),
        }
    }
}

/// Physical configuration of a correlated-beam source and its detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub kind: SourceKind,
    /// Mean detected photons per reference pixel per frame.
    pub n2: f64,
    /// Spatio-temporal modes per pixel per frame.
    pub modes: f64,
    /// End-to-end detection efficiency of each channel.
    pub eta: f64,
    /// Read-noise rms in electrons per pixel per frame.
    pub delta_el: f64,
}

impl SourceParams {
    pub fn new(kind: SourceKind, n2: f64, modes: f64, eta: f64, delta_el: f64) -> Result<Self> {
        let p = Self {
            kind,
            n2,
            modes,
            eta,
            delta_el,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn twin(n2: f64, modes: f64, eta: f64, delta_el: f64) -> Result<Self> {
        Self::new(SourceKind::Twin, n2, modes, eta, delta_el)
    }

    pub fn thermal(n2: f64, modes: f64, eta: f64, delta_el: f64) -> Result<Self> {
        Self::new(SourceKind::Thermal, n2, modes, eta, delta_el)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n2 > 0.0 && self.n2.is_finite()) {
            return Err(Error::invalid(format!("n2 must be > 0, got {}", self.n2)));
        }
        if !(self.modes >= 1.0 && self.modes.is_finite()) {
            return Err(Error::invalid(format!("M must be >= 1, got {}", self.modes)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.delta_el >= 0.0 && self.delta_el.is_finite()) {
            return Err(Error::invalid(format!(
                "delta_el must be >= 0, got {}",
                self.delta_el
            )));
        }
        Ok(())
    }

    /// Detected photons per mode, `n2 / M`.
    pub fn brightness(&self) -> f64 {
        self.n2 / self.modes
    }

    /// Same source with a different efficiency (brightness at the detector
    /// unchanged).
    pub fn with_eta(self, eta: f64) -> Result<Self> {
        Self::new(self.kind, self.n2, self.modes, eta, self.delta_el)
    }
}

/// Insert a neutral filter of transmission `loss_factor` in front of both
/// arms: efficiency and detected mean scale together.
pub fn apply_extra_loss(params: SourceParams, loss_factor: f64) -> Result<SourceParams> {
    if !(loss_factor > 0.0 && loss_factor <= 1.0) {
        return Err(Error::invalid(format!(
            "loss factor must lie in (0, 1], got {loss_factor}"
        )));
    }
    if loss_factor == 1.0 {
        return Ok(params);
    }
    SourceParams::new(
        params.kind,
        params.n2 * loss_factor,
        params.modes,
        params.eta * loss_factor,
        params.delta_el,
    )
}

/// `frames` frames of per-pixel detector values for one channel.
/// Storage is frame-major, row-major within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    width: usize,
    height: usize,
    frames: usize,
    values: Vec<f64>,
}

impl FrameStack {
    pub fn new(width: usize, height: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::invalid("frame stack dimensions must be positive"));
        }
        if values.len() != width * height * frames {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} stack needs {} values, got {}",
                width,
                height,
                frames,
                width * height * frames,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            frames,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn frame(&self, h: usize) -> &[f64] {
        let px = self.pixels();
        &self.values[h * px..(h + 1) * px]
    }

    /// Time series of one pixel.
    pub fn pixel_series(&self, pixel: usize) -> Vec<f64> {
        let px = self.pixels();
        (0..self.frames).map(|h| self.values[h * px + pixel]).collect()
    }

    pub(crate) fn check_aligned(&self, other: &FrameStack) -> Result<()> {
        if (self.width, self.height, self.frames) != (other.width, other.height, other.frames) {
            return Err(Error::DimensionMismatch(format!(
                "stacks are {}x{}x{} and {}x{}x{}",
                self.width, self.height, self.frames, other.width, other.height, other.frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Routing {
    Independent,
    Partition,
}

/// A source illuminating a scene, ready to generate frames.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: SourceParams,
    width: usize,
    height: usize,
    counts: GeneratedCountSampler,
    routing: Routing,
    probe_prob: Vec<f64>,
    ref_prob: f64,
}

impl Simulation {
    pub fn new(params: SourceParams, scene: &TransmissionMap) -> Result<Self> {
        params.validate()?;
        let (arm_eff, routing) = match params.kind {
            SourceKind::Twin => (params.eta, Routing::Independent),
            SourceKind::Thermal => (params.eta / 2.0, Routing::Partition),
        };
        let stats = ModeStatistics::new(params.n2 / (arm_eff * params.modes), params.modes)?;
        let probe_prob: Vec<f64> = scene.values().iter().map(|t| arm_eff * t).collect();
        if let Routing::Partition = routing {
            let t_max = scene.values().iter().copied().fold(0.0, f64::max);
            statcore::check_partition(arm_eff * t_max, arm_eff)?;
        }
        Ok(Self {
            params,
            width: scene.width(),
            height: scene.height(),
            counts: stats.sampler(),
            routing,
            probe_prob,
            ref_prob: arm_eff,
        })
    }

    pub fn params(&self) -> &SourceParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Fill one frame of both channels.
    pub fn sample_frame(&self, seed: u64, frame: u64, probe: &mut [f64], reference: &mut [f64]) {
        let delta = self.params.delta_el;
        for (j, (p_out, r_out)) in probe.iter_mut().zip(reference.iter_mut()).enumerate() {
            let pixel = j as u64;
            let mut src = RngStream::new(seed, StreamId::new(frame, pixel, Channel::Source));
            let g = self.counts.sample(&mut src);
            let p_probe = self.probe_prob[j];
            let (d1, d2) = match self.routing {
                Routing::Independent => (
                    sample_binomial(g, p_probe, &mut src),
                    sample_binomial(g, self.ref_prob, &mut src),
                ),
                Routing::Partition => {
                    statcore::thin_partition_unchecked(g, p_probe, self.ref_prob, &mut src)
                }
            };
            if delta > 0.0 {
                let mut rp = RngStream::new(seed, StreamId::new(frame, pixel, Channel::Probe));
                let mut rr = RngStream::new(seed, StreamId::new(frame, pixel, Channel::Reference));
                *p_out = add_electronic_noise(d1, delta, &mut rp);
                *r_out = add_electronic_noise(d2, delta, &mut rr);
            } else {
                *p_out = d1 as f64;
                *r_out = d2 as f64;
            }
        }
    }

    /// Frames `start..start + count` of both channels, frame-major.
    pub fn sample_block(&self, seed: u64, start: usize, count: usize) -> (Vec<f64>, Vec<f64>) {
        let px = self.pixels();
        let mut probe = vec![0.0; px * count];
        let mut reference = vec![0.0; px * count];
        probe
            .par_chunks_mut(px)
            .zip(reference.par_chunks_mut(px))
            .enumerate()
            .for_each(|(h, (p, r))| self.sample_frame(seed, (start + h) as u64, p, r));
        (probe, reference)
    }

    /// Materialize `frames` frames of both channels.
    pub fn stacks(&self, frames: usize, seed: u64) -> Result<(FrameStack, FrameStack)> {
        if frames == 0 {
            return Err(Error::invalid("frame count must be >= 1"));
        }
        let (probe, reference) = self.sample_block(seed, 0, frames);
        Ok((
            FrameStack::new(self.width, self.height, frames, probe)?,
            FrameStack::new(self.width, self.height, frames, reference)?,
        ))
    }

    /// Stream `frames` frames straight into moment accumulators without
    /// storing them. Equal bit for bit to accumulating [`Self::stacks`].
    pub fn moments(&self, frames: usize, seed: u64, layout: Arc<BucketLayout>) -> Result<PairMoments> {
        let mut v = self.moments_at(&[frames], seed, layout)?;
        Ok(v.pop().expect("one checkpoint"))
    }

    /// Moments of the first `c` frames for every checkpoint `c` (ascending),
    /// from a single pass over `max(checkpoints)` frames.
    pub fn moments_at(
        &self,
        checkpoints: &[usize],
        seed: u64,
        layout: Arc<BucketLayout>,
    ) -> Result<Vec<PairMoments>> {
        if checkpoints.is_empty() || checkpoints.contains(&0) {
            return Err(Error::invalid("checkpoints must be non-empty and positive"));
        }
        if !checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("checkpoints must be strictly increasing"));
        }
        if (layout.width(), layout.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch("bucket layout does not match scene".into()));
        }
        let total = *checkpoints.last().expect("non-empty");
        let px = self.pixels();
        let blocks = frame_blocks(total, checkpoints);
        let partials: Vec<PairMoments> = blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = PairMoments::new(layout.clone());
                let mut scratch = FrameScratch::default();
                let mut p = vec![0.0; px];
                let mut r = vec![0.0; px];
                for h in start..end {
                    self.sample_frame(seed, h as u64, &mut p, &mut r);
                    acc.push_frame(&p, &r, &mut scratch);
                }
                acc
            })
            .collect();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut acc = PairMoments::new(layout.clone());
        let mut next = 0;
        for (part, &(_, end)) in partials.iter().zip(&blocks) {
            acc.merge(part);
            if next < checkpoints.len() && end == checkpoints[next] {
                out.push(acc.clone());
                next += 1;
            }
        }
        debug_assert_eq!(out.len(), checkpoints.len());
        Ok(out)
    }
}

/// Generate paired probe/reference stacks for `frames` frames.
pub fn simulate_pair(
    params: SourceParams,
    scene: &TransmissionMap,
    frames: usize,
    seed: u64,
) -> Result<(FrameStack, FrameStack)> {
    Simulation::new(params, scene)?.stacks(frames, seed)
}

/// Moments of frame stacks, with the same blocking the streaming path uses.
pub fn stack_moments(
    probe: &FrameStack,
    reference: &FrameStack,
    layout: Arc<BucketLayout>,
) -> Result<PairMoments> {
    probe.check_aligned(reference)?;
    if (layout.width(), layout.height()) != (probe.width, probe.height) {
        return Err(Error::DimensionMismatch("bucket layout does not match stacks".into()));
    }
    PairMoments::from_frames(layout, probe.frames, &probe.values, &reference.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_binary_scene, Layout};
    use crate::statcore::testutil::{covariance, describe};

    #[test]
    fn params_validation() {
        assert!(SourceParams::twin(1000.0, 5e10, 0.8, 5.0).is_ok());
        assert!(SourceParams::twin(0.0, 5e10, 0.8, 5.0).is_err());
        assert!(SourceParams::twin(10.0, 0.5, 0.8, 5.0).is_err());
        assert!(SourceParams::twin(10.0, 1.0, 1.2, 5.0).is_err());
        assert!(SourceParams::twin(10.0, 1.0, 0.0, 5.0).is_err());
        assert!(SourceParams::thermal(10.0, 1.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn extra_loss() {
        let p = SourceParams::twin(1000.0, 5e10, 0.794, 5.0).unwrap();
        assert_eq!(apply_extra_loss(p, 1.0).unwrap(), p);
        let q = apply_extra_loss(p, 0.378).unwrap();
        assert!((q.eta - 0.300).abs() < 5e-4);
        assert!((q.n2 - 378.0).abs() < 1e-9);
        // filter needed to bring 0.794 down to ~0.5
        let f: f64 = 0.5 / 0.794;
        assert!((f - 0.63).abs() < 0.005);
        assert!(apply_extra_loss(p, 0.0).is_err());
        assert!(apply_extra_loss(p, 1.1).is_err());
    }

    #[test]
    fn absorbing_object_leaves_only_read_noise() {
        let params = SourceParams::twin(1000.0, 5e10, 0.8, 5.0).unwrap();
        let scene = TransmissionMap::uniform(2, 2, 0.0).unwrap();
        let (probe, _) = simulate_pair(params, &scene, 50_000, 1).unwrap();
        for j in 0..4 {
            let s = describe(&probe.pixel_series(j));
            assert!(s.mean.abs() < 5.0 * s.se_mean);
            assert!((s.var - 25.0).abs() < 5.0 * s.se_var);
        }
    }

    #[test]
    fn twin_covariance_at_low_brightness() {
        let params = SourceParams::twin(1000.0, 5e10, 0.8, 0.0).unwrap();
        let scene = TransmissionMap::uniform(2, 1, 1.0).unwrap();
        let (probe, reference) = simulate_pair(params, &scene, 100_000, 2).unwrap();
        for j in 0..2 {
            let (cov, se) = covariance(&probe.pixel_series(j), &reference.pixel_series(j));
            assert!((cov - 800.0).abs() < 5.0 * se, "cov {cov} se {se}");
        }
    }

    #[test]
    fn thermal_covariance_vanishes_at_low_brightness() {
        let params = SourceParams::thermal(1000.0, 5e10, 0.8, 0.0).unwrap();
        let scene = TransmissionMap::uniform(2, 1, 1.0).unwrap();
        let (probe, reference) = simulate_pair(params, &scene, 100_000, 3).unwrap();
        for j in 0..2 {
            let (cov, se) = covariance(&probe.pixel_series(j), &reference.pixel_series(j));
            // expected n2^2 / M = 2e-5
            assert!(cov.abs() < 5.0 * se, "cov {cov} se {se}");
        }
    }

    #[test]
    fn streamed_moments_equal_stack_moments() {
        let params = SourceParams::twin(100.0, 1e3, 0.7, 3.0).unwrap();
        let scene = make_binary_scene(5, 4, 0.3, 1.0, 0.2, Layout::LeftBlock).unwrap();
        let sim = Simulation::new(params, &scene).unwrap();
        let layout = Arc::new(BucketLayout::single(5, 4));
        let (p, r) = sim.stacks(700, 9).unwrap();
        let a = stack_moments(&p, &r, layout.clone()).unwrap();
        let b = sim.moments(700, 9, layout.clone()).unwrap();
        for i in 0..20 {
            assert_eq!(a.cov_bucket1(i).to_bits(), b.cov_bucket1(i).to_bits());
            assert_eq!(a.var_ref(i).to_bits(), b.var_ref(i).to_bits());
        }
        // checkpoints give prefix moments
        let cps = sim.moments_at(&[100, 700], 9, layout.clone()).unwrap();
        let (p100, r100) = sim.stacks(100, 9).unwrap();
        let c = stack_moments(&p100, &r100, layout).unwrap();
        assert_eq!(cps[0].frames(), 100);
        assert_eq!(cps[0].cov_pair(3).to_bits(), c.cov_pair(3).to_bits());
        // extra block cuts only change rounding
        let (x, y) = (cps[1].cov_pair(3), a.cov_pair(3));
        assert!((x - y).abs() <= 1e-9 * y.abs());
    }

    #[test]
    fn stacks_do_not_depend_on_thread_count() {
        let params = SourceParams::twin(50.0, 10.0, 0.6, 2.0).unwrap();
        let scene = make_binary_scene(6, 5, 0.4, 1.0, 0.0, Layout::Rectangle).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_pair(params, &scene, 600, 77).unwrap())
        };
        let (p1, r1) = run(1);
        let (p4, r4) = run(4);
        assert_eq!(p1, p4);
        assert_eq!(r1, r4);
    }

    #[test]
    fn rejects_zero_frames() {
        let params = SourceParams::twin(50.0, 10.0, 0.6, 2.0).unwrap();
        let scene = TransmissionMap::uniform(2, 2, 1.0).unwrap();
        assert!(simulate_pair(params, &scene, 0, 1).is_err());
    }
}
