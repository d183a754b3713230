//! Object transmission maps and the scene statistics the analytic model needs.

use crate::error::{Error, Result};

/// A boolean selection of pixels on a `width x height` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask of {}x{} needs {} entries, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Rectangle `[row0, row0 + rows) x [col0, col0 + cols)`, clipped to the grid.
    pub fn rectangle(
        width: usize,
        height: usize,
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
    ) -> Self {
        let mut m = Self::empty(width, height);
        for r in row0..(row0 + rows).min(height) {
            for c in col0..(col0 + cols).min(width) {
                m.bits[r * width + c] = true;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Flat indices of the selected pixels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersects(&self, other: &PixelMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub(crate) fn check_grid(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, grid is {}x{}",
                self.width, self.height, width, height
            )));
        }
        Ok(())
    }
}

/// Placement of the low-transmission cells of a binary object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Fill whole columns from the left edge, top to bottom within a column.
    LeftBlock,
    /// A centred, nearly square patch with the grid's aspect ratio.
    Rectangle,
}

/// Levels of a two-level object and where the lower level sits.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLevels {
    pub t_plus: f64,
    pub t_minus: f64,
    /// Cells at `t_minus`.
    pub minus: PixelMask,
}

/// Per-cell object transmission on the reference pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    width: usize,
    height: usize,
    t: Vec<f64>,
    levels: Option<BinaryLevels>,
}

fn check_level(name: &str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {t}")));
    }
    Ok(())
}

impl TransmissionMap {
    /// Arbitrary transmission values, row-major.
    pub fn new(width: usize, height: usize, t: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("scene must contain at least one cell"));
        }
        if t.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} scene needs {} values, got {}",
                width,
                height,
                width * height,
                t.len()
            )));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("transmission {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            t,
            levels: None,
        })
    }

    pub fn uniform(width: usize, height: usize, t: f64) -> Result<Self> {
        check_level("transmission", t)?;
        Self::new(width, height, vec![t; width * height])
    }

    /// Two-level object whose `t_minus` cells are given by `mask`.
    pub fn from_mask(mask: &PixelMask, t_plus: f64, t_minus: f64) -> Result<Self> {
        check_level("t_plus", t_plus)?;
        check_level("t_minus", t_minus)?;
        if t_minus > t_plus {
            return Err(Error::invalid(format!(
                "t_minus ({t_minus}) must not exceed t_plus ({t_plus})"
            )));
        }
        let t = mask
            .bits()
            .iter()
            .map(|&m| if m { t_minus } else { t_plus })
            .collect();
        Ok(Self {
            width: mask.width(),
            height: mask.height(),
            t,
            levels: Some(BinaryLevels {
                t_plus,
                t_minus,
                minus: mask.clone(),
            }),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.t[row * self.width + col]
    }

    pub fn levels(&self) -> Option<&BinaryLevels> {
        self.levels.as_ref()
    }

    /// `(plus, minus)` masks of a binary scene.
    pub fn level_masks(&self) -> Option<(PixelMask, PixelMask)> {
        self.levels
            .as_ref()
            .map(|l| (l.minus.complement(), l.minus.clone()))
    }
}

/// Number of low-transmission cells for a requested fraction: `floor(eps * n)`.
///
/// A relative slack of 1e-9 keeps products such as `0.29 * 100` from landing
/// one cell short because of binary rounding.
pub fn minus_cell_count(epsilon: f64, cells: usize) -> usize {
    let exact = epsilon * cells as f64;
    ((exact * (1.0 + 1e-9)).floor() as usize).min(cells)
}

/// Build a two-level object with a fraction `epsilon` of cells at `t_minus`.
///
/// Exactly `floor(epsilon * width * height)` cells get `t_minus`; the realized
/// fraction is available from [`scene_stats`].
pub fn make_binary_scene(
    width: usize,
    height: usize,
    epsilon: f64,
    t_plus: f64,
    t_minus: f64,
    layout: Layout,
) -> Result<TransmissionMap> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("scene must contain at least one cell"));
    }
    let n = width * height;
    let count = minus_cell_count(epsilon, n);
    let mut mask = PixelMask::empty(width, height);
    match layout {
        Layout::LeftBlock => {
            for i in 0..count {
                mask.set(i % height, i / height, true);
            }
        }
        Layout::Rectangle => {
            if count > 0 {
                // patch width w, ceil(count / w) rows, last row partial
                let aspect = width as f64 / height as f64;
                let w = ((count as f64 * aspect).sqrt().ceil() as usize).clamp(1, width);
                let rows = count.div_ceil(w);
                let row0 = (height - rows.min(height)) / 2;
                let col0 = (width - w) / 2;
                for i in 0..count {
                    mask.set(row0 + i / w, col0 + i % w, true);
                }
            }
        }
    }
    TransmissionMap::from_mask(&mask, t_plus, t_minus)
}

/// Spatial statistics of a transmission map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneStats {
    pub cells: usize,
    pub t_bar: f64,
    pub t2_bar: f64,
    /// Realized low-level fraction (binary scenes only).
    pub epsilon: Option<f64>,
    pub t_plus: Option<f64>,
    pub t_minus: Option<f64>,
}

pub fn scene_stats(map: &TransmissionMap) -> SceneStats {
    let n = map.cells() as f64;
    let t_bar = map.t.iter().sum::<f64>() / n;
    let t2_bar = map.t.iter().map(|t| t * t).sum::<f64>() / n;
    let (epsilon, t_plus, t_minus) = match &map.levels {
        Some(l) => (
            Some(l.minus.count() as f64 / n),
            Some(l.t_plus),
            Some(l.t_minus),
        ),
        None => (None, None, None),
    };
    SceneStats {
        cells: map.cells(),
        t_bar,
        t2_bar,
        epsilon,
        t_plus,
        t_minus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_fraction_is_uniform_at_t_plus() {
        let m = make_binary_scene(5, 4, 0.0, 0.8, 0.1, Layout::LeftBlock).unwrap();
        assert!(m.values().iter().all(|&t| t == 0.8));
        assert_eq!(scene_stats(&m).epsilon, Some(0.0));
    }

    #[test]
    fn experiment_crop_rounds_down() {
        let m = make_binary_scene(34, 28, 0.52, 1.0, 0.0, Layout::LeftBlock).unwrap();
        assert_eq!(m.cells(), 952);
        assert_eq!(m.values().iter().filter(|&&t| t == 0.0).count(), 495);
        let s = scene_stats(&m);
        assert_eq!(s.epsilon, Some(495.0 / 952.0));
    }

    #[test]
    fn full_fraction_is_uniform_at_t_minus() {
        let m = make_binary_scene(6, 6, 1.0, 1.0, 0.25, Layout::Rectangle).unwrap();
        assert!(m.values().iter().all(|&t| t == 0.25));
        assert_eq!(scene_stats(&m).t_bar, 0.25);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        assert!(make_binary_scene(4, 4, 1.2, 1.0, 0.0, Layout::LeftBlock).is_err());
        assert!(make_binary_scene(4, 4, -0.1, 1.0, 0.0, Layout::LeftBlock).is_err());
        assert!(make_binary_scene(4, 4, 0.5, 1.3, 0.0, Layout::LeftBlock).is_err());
        assert!(make_binary_scene(4, 4, 0.5, 1.0, -0.2, Layout::LeftBlock).is_err());
        assert!(make_binary_scene(4, 4, 0.5, 0.3, 0.6, Layout::LeftBlock).is_err());
        assert!(TransmissionMap::new(2, 2, vec![0.5, 0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn left_block_fills_columns_from_the_left() {
        let m = make_binary_scene(4, 3, 0.5, 1.0, 0.0, Layout::LeftBlock).unwrap();
        // 6 cells: columns 0 and 1 entirely
        for r in 0..3 {
            assert_eq!(m.get(r, 0), 0.0);
            assert_eq!(m.get(r, 1), 0.0);
            assert_eq!(m.get(r, 2), 1.0);
        }
    }

    #[test]
    fn uniform_stats() {
        let s = scene_stats(&TransmissionMap::uniform(3, 3, 1.0).unwrap());
        assert_eq!((s.t_bar, s.t2_bar), (1.0, 1.0));
        assert_eq!(s.epsilon, None);
    }

    #[test]
    fn binary_half_stats() {
        let s = scene_stats(&make_binary_scene(10, 10, 0.5, 1.0, 0.0, Layout::LeftBlock).unwrap());
        assert_eq!((s.t_bar, s.t2_bar), (0.5, 0.5));
    }

    #[test]
    fn binary_stats_match_direct_summation() {
        let m = make_binary_scene(10, 10, 0.18, 1.0, 0.52, Layout::Rectangle).unwrap();
        // oracle: sum the cell list by hand
        let (mut s1, mut s2) = (0.0, 0.0);
        for r in 0..10 {
            for c in 0..10 {
                let t = m.get(r, c);
                s1 += t;
                s2 += t * t;
            }
        }
        let s = scene_stats(&m);
        assert!((s1 / 100.0 - 0.9136).abs() < 1e-12);
        assert!((s2 / 100.0 - 0.868672).abs() < 1e-12);
        assert!((s.t_bar - 0.9136).abs() < 1e-12);
        assert!((s.t2_bar - 0.868672).abs() < 1e-12);
    }

    #[test]
    fn level_masks_partition_grid() {
        let m = make_binary_scene(7, 5, 0.3, 1.0, 0.0, Layout::Rectangle).unwrap();
        let (plus, minus) = m.level_masks().unwrap();
        assert!(!plus.intersects(&minus));
        assert_eq!(plus.count() + minus.count(), 35);
        assert_eq!(minus.count(), 10);
    }

    proptest! {
        #[test]
        fn realized_mean_matches_closed_form(
            w in 1usize..40, h in 1usize..40, eps in 0.0f64..=1.0,
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, rect in any::<bool>(),
        ) {
            let (t_plus, t_minus) = if a >= b { (a, b) } else { (b, a) };
            let layout = if rect { Layout::Rectangle } else { Layout::LeftBlock };
            let m = make_binary_scene(w, h, eps, t_plus, t_minus, layout).unwrap();
            let s = scene_stats(&m);
            let realized = s.epsilon.unwrap();
            prop_assert_eq!(m.level_masks().unwrap().1.count(), minus_cell_count(eps, w * h));
            prop_assert!(realized <= eps + 1e-9);
            let closed = (1.0 - realized) * t_plus + realized * t_minus;
            prop_assert!((s.t_bar - closed).abs() < 1e-12);
            prop_assert!(s.t_bar >= t_minus - 1e-12 && s.t_bar <= t_plus + 1e-12);
        }
    }
}
