//! Smallest-of-cell-averages CFAR over a polar sonar image.

use crate::error::{Error, Result};
use crate::simworld::{Mount, SonarImage};
use crate::{PointCloud, PolarPoint, BODY_FRAME};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarParams {
    /// Training cells per directional window.
    pub train_cells: usize,
    /// Guard cells between the cell under test and each window.
    pub guard_cells: usize,
    pub p_fa: f64,
    /// Absolute floor; cells at or below it are never detected.
    pub min_intensity: f64,
}

impl Default for CfarParams {
    fn default() -> Self {
        Self {
            train_cells: 20,
            guard_cells: 2,
            p_fa: 1e-4,
            min_intensity: 0.25,
        }
    }
}

impl CfarParams {
    pub fn validate(&self) -> Result<()> {
        if self.train_cells == 0 {
            return Err(Error::InvalidParameter("train_cells must be at least 1".into()));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::InvalidParameter("p_fa must lie in (0, 1)".into()));
        }
        if !(self.min_intensity >= 0.0) {
            return Err(Error::InvalidParameter("min_intensity must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `N * (P_fa^(-1/N) - 1)`.
pub fn detection_constant(n: usize, p_fa: f64) -> f64 {
    let n = n as f64;
    n * (p_fa.powf(-1.0 / n) - 1.0)
}

/// Detected cells of one image, kept both as a grid and as a list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectionMask {
    rows: usize,
    cols: usize,
    grid: Vec<bool>,
    cells: Vec<(usize, usize)>,
}

impl DetectionMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            grid: vec![false; rows * cols],
            cells: Vec::new(),
        }
    }

    /// Builds a mask from a cell list; duplicates are ignored.
    pub fn from_cells(rows: usize, cols: usize, cells: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(rows, cols);
        for &(r, c) in cells {
            m.insert(r, c);
        }
        m.cells.sort_unstable();
        m
    }

    fn insert(&mut self, r: usize, c: usize) {
        assert!(r < self.rows && c < self.cols, "cell outside mask");
        let i = r * self.cols + c;
        if !self.grid[i] {
            self.grid[i] = true;
            self.cells.push((r, c));
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_set(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.cols + c]
    }

    /// Detected `(range_bin, beam)` cells in row-major order.
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_consistent(&self) -> bool {
        self.grid.iter().filter(|&&g| g).count() == self.cells.len()
            && self.cells.iter().all(|&(r, c)| self.is_set(r, c))
    }

    pub fn is_congruent_with(&self, img: &SonarImage) -> bool {
        self.rows == img.rows() && self.cols == img.cols()
    }
}

struct PrefixSums {
    // Per beam, cumulative sums down the range axis: (rows + 1) entries.
    along_range: Vec<f64>,
    // Per range bin, cumulative sums across beams: (cols + 1) entries.
    along_beam: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl PrefixSums {
    fn new(img: &SonarImage) -> Self {
        let (rows, cols) = (img.rows(), img.cols());
        let mut along_range = vec![0.0; cols * (rows + 1)];
        let mut along_beam = vec![0.0; rows * (cols + 1)];
        for c in 0..cols {
            let base = c * (rows + 1);
            for r in 0..rows {
                along_range[base + r + 1] = along_range[base + r] + img.get(r, c);
            }
        }
        for r in 0..rows {
            let base = r * (cols + 1);
            for c in 0..cols {
                along_beam[base + c + 1] = along_beam[base + c] + img.get(r, c);
            }
        }
        Self {
            along_range,
            along_beam,
            rows,
            cols,
        }
    }

    /// Sum of rows `[lo, hi)` in beam `c`.
    fn range_sum(&self, c: usize, lo: usize, hi: usize) -> f64 {
        let base = c * (self.rows + 1);
        self.along_range[base + hi] - self.along_range[base + lo]
    }

    /// Sum of beams `[lo, hi)` in row `r`.
    fn beam_sum(&self, r: usize, lo: usize, hi: usize) -> f64 {
        let base = r * (self.cols + 1);
        self.along_beam[base + hi] - self.along_beam[base + lo]
    }
}

/// Cell range `[lo, hi)` of the window before index `i`, truncated at 0.
fn window_before(i: usize, guard: usize, train: usize) -> (usize, usize) {
    let hi = i.saturating_sub(guard);
    let lo = i.saturating_sub(guard + train);
    (lo, hi)
}

/// Cell range `[lo, hi)` of the window after index `i`, truncated at `len`.
fn window_after(i: usize, guard: usize, train: usize, len: usize) -> (usize, usize) {
    let lo = (i + guard + 1).min(len);
    let hi = (i + guard + train + 1).min(len);
    (lo, hi)
}

/// Detection threshold for one cell, or `None` when every window is empty.
fn cell_threshold(sums: &PrefixSums, r: usize, c: usize, p: &CfarParams) -> Option<f64> {
    let (g, n) = (p.guard_cells, p.train_cells);
    let windows = [
        {
            let (lo, hi) = window_before(r, g, n);
            (sums.range_sum(c, lo, hi), hi - lo)
        },
        {
            let (lo, hi) = window_after(r, g, n, sums.rows);
            (sums.range_sum(c, lo, hi), hi - lo)
        },
        {
            let (lo, hi) = window_before(c, g, n);
            (sums.beam_sum(r, lo, hi), hi - lo)
        },
        {
            let (lo, hi) = window_after(c, g, n, sums.cols);
            (sums.beam_sum(r, lo, hi), hi - lo)
        },
    ];
    let mut best: Option<(f64, usize)> = None;
    for (sum, count) in windows {
        if count == 0 {
            continue;
        }
        let mean = sum / count as f64;
        if best.is_none_or(|(m, _)| mean < m) {
            best = Some((mean, count));
        }
    }
    best.map(|(mean, count)| mean * detection_constant(count, p.p_fa))
}

/// Flags cells whose intensity exceeds both `alpha * mu_min` and the
/// absolute floor. `mu_min` is the smallest of four directional training
/// means (before/after in range, before/after in beam), each separated from
/// the cell by the guard band. Windows truncated at the border use their own
/// cell count in `alpha`.
pub fn soca_cfar(img: &SonarImage, p: &CfarParams) -> Result<DetectionMask> {
    p.validate()?;
    let sums = PrefixSums::new(img);
    let mut mask = DetectionMask::empty(img.rows(), img.cols());
    for r in 0..img.rows() {
        for c in 0..img.cols() {
            let v = img.get(r, c);
            if v <= p.min_intensity {
                continue;
            }
            if let Some(beta) = cell_threshold(&sums, r, c, p) {
                if v > beta {
                    mask.insert(r, c);
                }
            }
        }
    }
    Ok(mask)
}

/// Polar coordinates of a detected cell at bin-center range and beam-center angle.
pub fn cell_polar(img: &SonarImage, r: usize, c: usize) -> PolarPoint {
    let cfg = &img.config;
    let (bearing, elevation) = match cfg.mount {
        Mount::Horizontal => (cfg.beam_angle(c), 0.0),
        Mount::Vertical => (0.0, cfg.beam_angle(c)),
    };
    PolarPoint::new(cfg.bin_range(r), bearing, elevation, img.get(r, c))
}

/// Nearest supported detection of every beam, at zero elevation.
///
/// A horizontal return spreads outward over the elevation aperture, so only
/// the leading edge of each beam marks the surface. A cell counts when another
/// detection lies within `support` range bins and one beam of it; isolated
/// speckle alarms in front of a target are skipped. Output is in beam order.
pub fn leading_edge_cloud(mask: &DetectionMask, img: &SonarImage, support: usize) -> PointCloud {
    assert!(mask.is_congruent_with(img), "mask and image differ in shape");
    let (rows, cols) = (mask.rows(), mask.cols());
    let supported = |r: usize, c: usize| {
        let rs = r.saturating_sub(support)..=(r + support).min(rows - 1);
        let cs = c.saturating_sub(1)..=(c + 1).min(cols - 1);
        rs.flat_map(|rr| cs.clone().map(move |cc| (rr, cc)))
            .any(|(rr, cc)| (rr, cc) != (r, c) && mask.is_set(rr, cc))
    };
    let mut first: Vec<Option<usize>> = vec![None; cols];
    for &(r, c) in mask.cells() {
        if first[c].is_none() && supported(r, c) {
            first[c] = Some(r);
        }
    }
    let mut cloud = PointCloud::new(BODY_FRAME);
    for (c, r) in first.into_iter().enumerate() {
        if let Some(r) = r {
            let p = cell_polar(img, r, c);
            cloud.push(p.to_cartesian(), p.intensity);
        }
    }
    cloud
}

/// Maps each detection to a body-frame point with the unknown angle set to
/// zero. Points keep the mask's row-major order.
pub fn mask_to_planar_cloud(mask: &DetectionMask, img: &SonarImage) -> PointCloud {
    assert!(mask.is_congruent_with(img), "mask and image differ in shape");
    let mut cloud = PointCloud::new(BODY_FRAME);
    let mut intensity = Vec::with_capacity(mask.count());
    for &(r, c) in mask.cells() {
        let p = cell_polar(img, r, c);
        cloud.points.push(p.to_cartesian());
        intensity.push(p.intensity);
    }
    cloud.intensity = Some(intensity);
    cloud
}
