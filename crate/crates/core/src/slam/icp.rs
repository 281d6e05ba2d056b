//! Planar point-to-point ICP.

use crate::{PointCloud, Pose2};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Pairs farther apart than this are not correspondences, meters.
    pub max_correspondence: f64,
    pub max_iterations: usize,
    /// Stop once the per-iteration update (meters + radians) drops below this.
    pub tolerance: f64,
    /// Minimum inlier fraction of the source for a usable result.
    pub fitness_min: f64,
    /// Tighter correspondence radii run in turn after convergence at
    /// `max_correspondence`; fitness is still judged at the widest radius.
    pub refine: Vec<f64>,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_correspondence: 1.0,
            max_iterations: 50,
            tolerance: 1e-6,
            fitness_min: 0.5,
            refine: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcpStatus {
    Converged,
    /// Ran out of iterations with an acceptable fitness.
    MaxIterations,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    /// Transform taking source coordinates into the target frame.
    pub pose: Pose2,
    pub fitness: f64,
    /// Root mean square distance over inlier pairs.
    pub rmse: f64,
    pub iterations: usize,
    pub status: IcpStatus,
}

impl IcpResult {
    pub fn ok(&self) -> bool {
        self.status != IcpStatus::Failed
    }
}

/// Hash grid over 2D points for fixed-radius nearest-neighbor queries.
pub struct NearestIndex {
    cell: f64,
    points: Vec<[f64; 2]>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

impl NearestIndex {
    pub fn new(points: Vec<[f64; 2]>, cell: f64) -> Self {
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, points, grid }
    }

    fn key(p: &[f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Nearest point within `radius` (at most the index cell size); ties go
    /// to the lower index.
    pub fn nearest(&self, q: &[f64; 2], radius: f64) -> Option<(usize, f64)> {
        let (kx, ky) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = self.grid.get(&(kx + dx, ky + dy)) else {
                    continue;
                };
                for &i in bucket {
                    let p = self.points[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 <= r2 && best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                        best = Some((i, d2));
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

pub fn planar_points(c: &PointCloud) -> Vec<[f64; 2]> {
    c.points.iter().map(|p| [p.x, p.y]).collect()
}

/// Closed-form rigid alignment of paired 2D points (source onto target).
pub fn align_pairs(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Pose2 {
    let n = src.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        sx += a[0];
        sy += a[1];
        dx += b[0];
        dy += b[1];
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        let (ax, ay) = (a[0] - sx, a[1] - sy);
        let (bx, by) = (b[0] - dx, b[1] - dy);
        num += ax * by - ay * bx;
        den += ax * bx + ay * by;
    }
    let yaw = num.atan2(den);
    let (s, c) = yaw.sin_cos();
    Pose2::new(dx - (c * sx - s * sy), dy - (s * sx + c * sy), yaw)
}

/// Iterates closest-point pairing and closed-form alignment at one radius.
/// Returns the pose, the iterations used and whether the update converged;
/// `None` when fewer than three pairs remain or the update degenerates.
fn icp_stage(
    source: &[[f64; 2]],
    target: &NearestIndex,
    mut pose: Pose2,
    radius: f64,
    p: &IcpParams,
) -> Option<(Pose2, usize, bool)> {
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    for it in 0..p.max_iterations {
        src.clear();
        dst.clear();
        for q in source {
            let (x, y) = pose.transform_xy(q[0], q[1]);
            if let Some((j, _)) = target.nearest(&[x, y], radius) {
                src.push(*q);
                dst.push(target.points()[j]);
            }
        }
        if src.len() < 3 {
            return None;
        }
        let next = align_pairs(&src, &dst);
        if !next.is_finite() {
            return None;
        }
        let step = pose.between(&next);
        pose = next;
        if step.translation_norm() + step.yaw.abs() < p.tolerance {
            return Some((pose, it + 1, true));
        }
    }
    Some((pose, p.max_iterations, false))
}

/// Registers `source` onto an indexed target starting from `initial`.
pub fn icp_indexed(source: &[[f64; 2]], target: &NearestIndex, initial: Pose2, p: &IcpParams) -> IcpResult {
    let failed = |pose, iterations| IcpResult {
        pose,
        fitness: 0.0,
        rmse: f64::INFINITY,
        iterations,
        status: IcpStatus::Failed,
    };
    if source.is_empty() || target.points().is_empty() || !initial.is_finite() {
        return failed(initial, 0);
    }
    let Some((mut pose, mut iterations, converged)) = icp_stage(source, target, initial, p.max_correspondence, p)
    else {
        return failed(initial, 0);
    };
    let mut status = if converged {
        IcpStatus::Converged
    } else {
        IcpStatus::MaxIterations
    };
    for &radius in p.refine.iter().filter(|&&r| r > 0.0 && r < p.max_correspondence) {
        // A stage that loses its pairs keeps the previous estimate.
        let Some((next, its, _)) = icp_stage(source, target, pose, radius, p) else {
            break;
        };
        pose = next;
        iterations += its;
    }
    let (mut inliers, mut sq) = (0usize, 0.0);
    for q in source {
        let (x, y) = pose.transform_xy(q[0], q[1]);
        if let Some((_, d)) = target.nearest(&[x, y], p.max_correspondence) {
            inliers += 1;
            sq += d * d;
        }
    }
    let fitness = inliers as f64 / source.len() as f64;
    let rmse = if inliers > 0 {
        (sq / inliers as f64).sqrt()
    } else {
        f64::INFINITY
    };
    if fitness < p.fitness_min {
        status = IcpStatus::Failed;
    }
    IcpResult {
        pose,
        fitness,
        rmse,
        iterations,
        status,
    }
}

/// Point-to-point ICP on the xy components of two clouds.
pub fn icp_2d(source: &PointCloud, target: &PointCloud, initial: Pose2, p: &IcpParams) -> IcpResult {
    let index = NearestIndex::new(planar_points(target), p.max_correspondence);
    icp_indexed(&planar_points(source), &index, initial, p)
}
