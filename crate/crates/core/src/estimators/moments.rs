//! Streaming first and second moments of a probe/reference frame pair.
//!
//! Every ghost-imaging estimator in this crate is a function of per-pixel
//! means and co-moments plus the co-moments of bucket signals. They are
//! accumulated frame by frame with Welford updates, in fixed-size blocks that
//! can be processed in parallel and are merged in block order, so the result
//! is bit-identical for any number of worker threads.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::PixelMask;

/// Frames per accumulation block.
pub const BLOCK_FRAMES: usize = 256;

/// A tile of the pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Assignment of every pixel to one bucket region.
///
/// The bucket signals `N1`, `N2` of a region are the sums of the probe and
/// reference pixels in that region. A single region spanning the grid is the
/// usual ghost-imaging setup; tiles give independent sub-reconstructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketLayout {
    width: usize,
    height: usize,
    region_of: Vec<u32>,
    tiles: Vec<TileRect>,
    grid: (usize, usize),
}

impl BucketLayout {
    pub fn single(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            region_of: vec![0; width * height],
            tiles: vec![TileRect {
                row0: 0,
                col0: 0,
                rows: height,
                cols: width,
            }],
            grid: (1, 1),
        }
    }

    /// `rows x cols` tiles; the last tile in each direction absorbs the
    /// remainder. Tiles smaller than 2x2 are rejected, except that a 1x1
    /// tiling of any grid is always allowed.
    pub fn tiles(width: usize, height: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("tile counts must be positive"));
        }
        if rows == 1 && cols == 1 {
            return Ok(Self::single(width, height));
        }
        let tile_h = height / rows;
        let tile_w = width / cols;
        if tile_h < 2 || tile_w < 2 {
            return Err(Error::invalid(format!(
                "{rows}x{cols} tiling of a {width}x{height} grid gives tiles smaller than 2x2"
            )));
        }
        let mut region_of = vec![0u32; width * height];
        let mut tiles = Vec::with_capacity(rows * cols);
        for tr in 0..rows {
            let row0 = tr * tile_h;
            let nrows = if tr + 1 == rows { height - row0 } else { tile_h };
            for tc in 0..cols {
                let col0 = tc * tile_w;
                let ncols = if tc + 1 == cols { width - col0 } else { tile_w };
                let id = tiles.len() as u32;
                for r in row0..row0 + nrows {
                    for c in col0..col0 + ncols {
                        region_of[r * width + c] = id;
                    }
                }
                tiles.push(TileRect {
                    row0,
                    col0,
                    rows: nrows,
                    cols: ncols,
                });
            }
        }
        Ok(Self {
            width,
            height,
            region_of,
            tiles,
            grid: (rows, cols),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn regions(&self) -> usize {
        self.tiles.len()
    }

    pub fn region_of(&self, pixel: usize) -> usize {
        self.region_of[pixel] as usize
    }

    pub fn tile_rects(&self) -> &[TileRect] {
        &self.tiles
    }

    /// `(rows, cols)` of the tiling.
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }
}

/// Running moments of one probe/reference frame sequence.
#[derive(Debug, Clone)]
pub struct PairMoments {
    layout: Arc<BucketLayout>,
    frames: usize,
    // per pixel
    mean_probe: Vec<f64>,
    mean_ref: Vec<f64>,
    m2_probe: Vec<f64>,
    m2_ref: Vec<f64>,
    c_pair: Vec<f64>,
    c_bucket1: Vec<f64>,
    c_bucket2: Vec<f64>,
    // per bucket region
    mean_b1: Vec<f64>,
    mean_b2: Vec<f64>,
    m2_b1: Vec<f64>,
    m2_b2: Vec<f64>,
    c_b12: Vec<f64>,
}

/// Per-frame scratch buffers for [`PairMoments::push_frame`].
#[derive(Debug, Default)]
pub struct FrameScratch {
    b1: Vec<f64>,
    b2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl PairMoments {
    pub fn new(layout: Arc<BucketLayout>) -> Self {
        let n = layout.width * layout.height;
        let r = layout.regions();
        Self {
            layout,
            frames: 0,
            mean_probe: vec![0.0; n],
            mean_ref: vec![0.0; n],
            m2_probe: vec![0.0; n],
            m2_ref: vec![0.0; n],
            c_pair: vec![0.0; n],
            c_bucket1: vec![0.0; n],
            c_bucket2: vec![0.0; n],
            mean_b1: vec![0.0; r],
            mean_b2: vec![0.0; r],
            m2_b1: vec![0.0; r],
            m2_b2: vec![0.0; r],
            c_b12: vec![0.0; r],
        }
    }

    /// Accumulate frame stacks given as flat frame-major slices.
    pub fn from_frames(
        layout: Arc<BucketLayout>,
        frames: usize,
        probe: &[f64],
        reference: &[f64],
    ) -> Result<Self> {
        let px = layout.width * layout.height;
        if probe.len() != frames * px || reference.len() != frames * px {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values per stack, got {} and {}",
                frames * px,
                probe.len(),
                reference.len()
            )));
        }
        let blocks = frame_blocks(frames, &[]);
        let partials: Vec<PairMoments> = blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = PairMoments::new(layout.clone());
                let mut scratch = FrameScratch::default();
                for h in start..end {
                    let s = h * px;
                    acc.push_frame(&probe[s..s + px], &reference[s..s + px], &mut scratch);
                }
                acc
            })
            .collect();
        Ok(merge_in_order(layout, partials))
    }

    pub fn layout(&self) -> &BucketLayout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn pixels(&self) -> usize {
        self.mean_probe.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Welford update with one frame.
    pub fn push_frame(&mut self, probe: &[f64], reference: &[f64], scratch: &mut FrameScratch) {
        let px = self.pixels();
        assert_eq!(probe.len(), px, "probe frame size");
        assert_eq!(reference.len(), px, "reference frame size");
        let regions = self.mean_b1.len();
        let FrameScratch { b1, b2, d1, d2 } = scratch;
        b1.clear();
        b1.resize(regions, 0.0);
        b2.clear();
        b2.resize(regions, 0.0);
        if regions == 1 {
            b1[0] = probe.iter().sum();
            b2[0] = reference.iter().sum();
        } else {
            for (i, (&x1, &x2)) in probe.iter().zip(reference).enumerate() {
                let r = self.layout.region_of[i] as usize;
                b1[r] += x1;
                b2[r] += x2;
            }
        }
        self.frames += 1;
        let inv = 1.0 / self.frames as f64;
        d1.clear();
        d2.clear();
        for r in 0..regions {
            d1.push(b1[r] - self.mean_b1[r]);
            d2.push(b2[r] - self.mean_b2[r]);
        }
        for i in 0..px {
            let r = if regions == 1 {
                0
            } else {
                self.layout.region_of[i] as usize
            };
            let x1 = probe[i];
            let x2 = reference[i];
            let dx1 = x1 - self.mean_probe[i];
            let dx2 = x2 - self.mean_ref[i];
            self.mean_probe[i] += dx1 * inv;
            self.mean_ref[i] += dx2 * inv;
            let e1 = x1 - self.mean_probe[i];
            let e2 = x2 - self.mean_ref[i];
            self.m2_probe[i] += dx1 * e1;
            self.m2_ref[i] += dx2 * e2;
            self.c_pair[i] += dx1 * e2;
            self.c_bucket1[i] += d1[r] * e2;
            self.c_bucket2[i] += d2[r] * e2;
        }
        for r in 0..regions {
            self.mean_b1[r] += d1[r] * inv;
            self.mean_b2[r] += d2[r] * inv;
            let e1 = b1[r] - self.mean_b1[r];
            let e2 = b2[r] - self.mean_b2[r];
            self.m2_b1[r] += d1[r] * e1;
            self.m2_b2[r] += d2[r] * e2;
            self.c_b12[r] += d1[r] * e2;
        }
    }

    /// Combine with the moments of a later, disjoint set of frames.
    pub fn merge(&mut self, other: &PairMoments) {
        assert_eq!(self.pixels(), other.pixels(), "merging different grids");
        if other.frames == 0 {
            return;
        }
        if self.frames == 0 {
            *self = other.clone();
            return;
        }
        let na = self.frames as f64;
        let nb = other.frames as f64;
        let n = na + nb;
        let wb = nb / n;
        let cross = na * nb / n;
        let regions = self.mean_b1.len();
        let mut db1 = Vec::with_capacity(regions);
        let mut db2 = Vec::with_capacity(regions);
        for r in 0..regions {
            db1.push(other.mean_b1[r] - self.mean_b1[r]);
            db2.push(other.mean_b2[r] - self.mean_b2[r]);
        }
        for i in 0..self.pixels() {
            let r = self.layout.region_of[i] as usize;
            let d1 = other.mean_probe[i] - self.mean_probe[i];
            let d2 = other.mean_ref[i] - self.mean_ref[i];
            self.m2_probe[i] += other.m2_probe[i] + d1 * d1 * cross;
            self.m2_ref[i] += other.m2_ref[i] + d2 * d2 * cross;
            self.c_pair[i] += other.c_pair[i] + d1 * d2 * cross;
            self.c_bucket1[i] += other.c_bucket1[i] + db1[r] * d2 * cross;
            self.c_bucket2[i] += other.c_bucket2[i] + db2[r] * d2 * cross;
            self.mean_probe[i] += d1 * wb;
            self.mean_ref[i] += d2 * wb;
        }
        for r in 0..regions {
            self.m2_b1[r] += other.m2_b1[r] + db1[r] * db1[r] * cross;
            self.m2_b2[r] += other.m2_b2[r] + db2[r] * db2[r] * cross;
            self.c_b12[r] += other.c_b12[r] + db1[r] * db2[r] * cross;
            self.mean_b1[r] += db1[r] * wb;
            self.mean_b2[r] += db2[r] * wb;
        }
        self.frames += other.frames;
    }

    fn divisor(&self) -> f64 {
        self.frames as f64 - 1.0
    }

    pub fn require_frames(&self, needed: usize) -> Result<()> {
        if self.frames < needed {
            return Err(Error::TooFewFrames {
                needed,
                got: self.frames,
            });
        }
        Ok(())
    }

    pub fn mean_probe(&self, i: usize) -> f64 {
        self.mean_probe[i]
    }

    pub fn mean_ref(&self, i: usize) -> f64 {
        self.mean_ref[i]
    }

    pub fn var_probe(&self, i: usize) -> f64 {
        self.m2_probe[i] / self.divisor()
    }

    pub fn var_ref(&self, i: usize) -> f64 {
        self.m2_ref[i] / self.divisor()
    }

    /// Sample covariance of the probe and reference values of pixel `i`.
    pub fn cov_pair(&self, i: usize) -> f64 {
        self.c_pair[i] / self.divisor()
    }

    /// Sample covariance of `N1` (pixel's region) with reference pixel `i`.
    pub fn cov_bucket1(&self, i: usize) -> f64 {
        self.c_bucket1[i] / self.divisor()
    }

    /// Sample covariance of `N2` (pixel's region) with reference pixel `i`.
    pub fn cov_bucket2(&self, i: usize) -> f64 {
        self.c_bucket2[i] / self.divisor()
    }

    pub fn bucket_mean1(&self, region: usize) -> f64 {
        self.mean_b1[region]
    }

    pub fn bucket_mean2(&self, region: usize) -> f64 {
        self.mean_b2[region]
    }

    pub fn bucket_var1(&self, region: usize) -> f64 {
        self.m2_b1[region] / self.divisor()
    }

    pub fn bucket_var2(&self, region: usize) -> f64 {
        self.m2_b2[region] / self.divisor()
    }

    pub fn bucket_cov(&self, region: usize) -> f64 {
        self.c_b12[region] / self.divisor()
    }

    pub(crate) fn check_mask(&self, mask: &PixelMask, what: &str) -> Result<()> {
        mask.check_grid(self.width(), self.height(), what)
    }
}

/// Split `[0, frames)` into consecutive blocks of at most [`BLOCK_FRAMES`],
/// additionally cut at every checkpoint.
pub fn frame_blocks(frames: usize, checkpoints: &[usize]) -> Vec<(usize, usize)> {
    let mut cuts: Vec<usize> = (1..)
        .map(|i| i * BLOCK_FRAMES)
        .take_while(|&c| c < frames)
        .chain(checkpoints.iter().copied().filter(|&c| c > 0 && c < frames))
        .collect();
    cuts.push(frames);
    cuts.sort_unstable();
    cuts.dedup();
    let mut start = 0;
    cuts.into_iter()
        .map(|end| {
            let b = (start, end);
            start = end;
            b
        })
        .collect()
}

pub(crate) fn merge_in_order(layout: Arc<BucketLayout>, partials: Vec<PairMoments>) -> PairMoments {
    let mut acc = PairMoments::new(layout);
    for p in &partials {
        acc.merge(p);
    }
    acc
}
