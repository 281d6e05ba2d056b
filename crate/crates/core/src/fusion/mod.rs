//! Cross-image pixel association for an orthogonal sonar pair.
//!
//! Each range bin is an independent assignment problem between the
//! horizontal and vertical detections at that range. Matched pairs inherit
//! bearing from the horizontal image and elevation from the vertical one.

mod assign;

pub use assign::{assign_padded, assignment_cost, hungarian};

use crate::detect::DetectionMask;
use crate::error::{Error, Result};
use crate::simworld::SonarImage;
use crate::{PointCloud, PolarPoint, BODY_FRAME};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Side of the square comparison patch, odd.
    pub patch_size: usize,
    pub confidence_min: f64,
    /// Vertical detections up to this many bins away join a bin's problem.
    pub range_bin_tolerance: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            patch_size: 5,
            confidence_min: 0.01,
            range_bin_tolerance: 0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::InvalidParameter("patch_size must be odd and at least 3".into()));
        }
        if !(self.confidence_min >= 0.0) {
            return Err(Error::InvalidParameter("confidence_min must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPoint {
    pub range: f64,
    pub bearing: f64,
    pub elevation: f64,
    pub confidence: f64,
    /// Only one vertical candidate existed, so `confidence` is the
    /// pass-through value rather than a measured margin.
    pub singleton: bool,
    /// Raw horizontal intensity at the matched cell.
    pub intensity: f64,
    pub h_cell: (usize, usize),
    pub v_cell: (usize, usize),
}

impl FusedPoint {
    pub fn polar(&self) -> PolarPoint {
        PolarPoint::new(self.range, self.bearing, self.elevation, self.intensity)
    }
}

/// Affine map of intensities onto [0, 1]; a constant image becomes zeros.
pub fn normalize_image(img: &SonarImage) -> SonarImage {
    let lo = img.intensities.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.intensities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = img.clone();
    let span = hi - lo;
    for v in out.intensities.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    out
}

/// Frobenius norm of `patch_h - rot90(patch_v)`, where rot90 turns the
/// vertical patch counterclockwise (numpy's `rot90` convention) and cells
/// outside an image read as zero.
pub fn patch_cost(
    h_img: &SonarImage,
    h_cell: (usize, usize),
    v_img: &SonarImage,
    v_cell: (usize, usize),
    patch_size: usize,
) -> f64 {
    let k = patch_size as isize;
    let half = k / 2;
    let (hr, hc) = (h_cell.0 as isize - half, h_cell.1 as isize - half);
    let (vr, vc) = (v_cell.0 as isize - half, v_cell.1 as isize - half);
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            // rot90(P)[i][j] = P[j][k - 1 - i]
            let a = h_img.get_padded(hr + i, hc + j);
            let b = v_img.get_padded(vr + j, vc + (k - 1 - i));
            sum += (a - b) * (a - b);
        }
    }
    sum.sqrt()
}

/// Linear-interpolated percentile, `q` in [0, 100].
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0.0;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Margin confidence of row `i` assigned to column `j`: distance to the
/// row's next-best cost over the row's total cost, clamped at zero.
/// `None` when the row has a single candidate.
pub fn match_confidence(row: &[f64], j: usize) -> Option<f64> {
    let second = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &c)| c)
        .reduce(f64::min)?;
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return Some(0.0);
    }
    Some(((second - row[j]) / total).max(0.0))
}

/// Matches detections across a normalized image pair.
///
/// Detections are first restricted to the dual-coverage region: horizontal
/// cells whose bearing lies inside the vertical sonar's integration
/// aperture and vertical cells whose elevation lies inside the horizontal
/// sonar's. Output is ordered by range bin, then horizontal beam.
pub fn fuse_pair(
    h_img: &SonarImage,
    h_mask: &DetectionMask,
    v_img: &SonarImage,
    v_mask: &DetectionMask,
    p: &FusionParams,
) -> Result<Vec<FusedPoint>> {
    p.validate()?;
    if (h_img.timestamp - v_img.timestamp).abs() > 1e-9 {
        return Err(Error::InvalidParameter("image pair timestamps differ".into()));
    }
    if !h_mask.is_congruent_with(h_img) || !v_mask.is_congruent_with(v_img) {
        return Err(Error::InvalidParameter("mask and image differ in shape".into()));
    }
    let (hc, vc) = (&h_img.config, &v_img.config);
    let bearing_lim = 0.5 * vc.vertical_aperture;
    let elev_lim = 0.5 * hc.vertical_aperture;
    let mut h_bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(r, c) in h_mask.cells() {
        if hc.beam_angle(c).abs() <= bearing_lim {
            h_bins.entry(r).or_default().push(c);
        }
    }
    let mut v_bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(r, c) in v_mask.cells() {
        if vc.beam_angle(c).abs() <= elev_lim {
            v_bins.entry(r).or_default().push(c);
        }
    }
    let tol = p.range_bin_tolerance;
    let mut out = Vec::new();
    for (&r, h_beams) in &h_bins {
        let v_cells: Vec<(usize, usize)> = v_bins
            .range(r.saturating_sub(tol)..=r + tol)
            .flat_map(|(&vr, beams)| beams.iter().map(move |&b| (vr, b)))
            .collect();
        if v_cells.is_empty() {
            continue;
        }
        let cost: Vec<Vec<f64>> = h_beams
            .iter()
            .map(|&b| {
                v_cells
                    .iter()
                    .map(|&vcell| patch_cost(h_img, (r, b), v_img, vcell, p.patch_size))
                    .collect()
            })
            .collect();
        let flat: Vec<f64> = cost.iter().flatten().copied().collect();
        let dummy = percentile(&flat, 95.0);
        for (i, a) in assign_padded(&cost, dummy).into_iter().enumerate() {
            let Some(j) = a else { continue };
            let (confidence, singleton) = match match_confidence(&cost[i], j) {
                Some(c) => (c, false),
                None => (p.confidence_min, true),
            };
            if confidence < p.confidence_min {
                continue;
            }
            let v_cell = v_cells[j];
            out.push(FusedPoint {
                range: 0.5 * (hc.bin_range(r) + vc.bin_range(v_cell.0)),
                bearing: hc.beam_angle(h_beams[i]),
                elevation: vc.beam_angle(v_cell.1),
                confidence,
                singleton,
                intensity: 0.0,
                h_cell: (r, h_beams[i]),
                v_cell,
            });
        }
    }
    Ok(out)
}

/// Normalizes both images, fuses, and fills raw horizontal intensities.
pub fn fuse_frame(
    h_raw: &SonarImage,
    h_mask: &DetectionMask,
    v_raw: &SonarImage,
    v_mask: &DetectionMask,
    p: &FusionParams,
) -> Result<Vec<FusedPoint>> {
    let mut pts = fuse_pair(&normalize_image(h_raw), h_mask, &normalize_image(v_raw), v_mask, p)?;
    for fp in &mut pts {
        fp.intensity = h_raw.get(fp.h_cell.0, fp.h_cell.1);
    }
    Ok(pts)
}

/// Body-frame Cartesian cloud of fused points.
pub fn fused_cloud(points: &[FusedPoint]) -> PointCloud {
    let mut cloud = PointCloud::new(BODY_FRAME);
    for fp in points {
        cloud.push(fp.polar().to_cartesian(), fp.intensity);
    }
    cloud
}
