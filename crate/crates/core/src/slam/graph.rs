//! Keyframe pose graph and its batch least-squares solver.

use crate::error::{Error, Result};
use crate::{PointCloud, Pose2, Pose3};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    Prior,
    Odometry,
    Ssm,
    Nssm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    /// Prior factors use only `from`.
    pub from: usize,
    pub to: usize,
    /// Measured pose of `to` in the frame of `from` (absolute pose for priors).
    pub relative: Pose2,
    pub information: [[f64; 3]; 3],
}

impl Factor {
    pub fn prior(id: usize, pose: Pose2, sigmas: [f64; 3]) -> Self {
        Self {
            kind: FactorKind::Prior,
            from: id,
            to: id,
            relative: pose,
            information: diagonal_information(sigmas),
        }
    }

    pub fn between(kind: FactorKind, from: usize, to: usize, relative: Pose2, sigmas: [f64; 3]) -> Self {
        Self {
            kind,
            from,
            to,
            relative,
            information: diagonal_information(sigmas),
        }
    }

    pub fn information_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.information[i][j])
    }

    /// Symmetric and positive definite.
    pub fn is_valid(&self) -> bool {
        let m = self.information_matrix();
        (m - m.transpose()).abs().max() < 1e-12 && m.cholesky().is_some()
    }

    /// Tangent-space error `log(Z^-1 * X_from^-1 * X_to)`.
    pub fn error(&self, xs: &[Pose2]) -> [f64; 3] {
        let predicted = match self.kind {
            FactorKind::Prior => xs[self.from],
            _ => xs[self.from].between(&xs[self.to]),
        };
        self.relative.between(&predicted).log()
    }
}

pub fn diagonal_information(sigmas: [f64; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for k in 0..3 {
        m[k][k] = 1.0 / (sigmas[k] * sigmas[k]);
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub id: usize,
    pub time: f64,
    /// Dead-reckoning pose projected to the plane.
    pub dr_pose: Pose2,
    pub estimate: Pose2,
    /// Horizontal detections with elevation zero, body frame.
    pub planar_cloud: PointCloud,
    /// Fused points, body frame.
    pub fused_cloud: PointCloud,
    pub depth: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl Keyframe {
    /// Planar estimate combined with the directly observed depth, roll and pitch.
    pub fn lift_to_6dof(&self) -> Pose3 {
        lift_to_6dof(self)
    }
}

pub fn lift_to_6dof(kf: &Keyframe) -> Pose3 {
    let e = &kf.estimate;
    Pose3::from_xyz_rpy(e.x, e.y, kf.depth, kf.roll, kf.pitch, e.yaw)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub keyframes: Vec<Keyframe>,
    pub factors: Vec<Factor>,
    pub last_stats: Option<OptimizeStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iterations: usize,
    /// Stop when the cost decreases by less than this.
    pub cost_tolerance: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-9,
        }
    }
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframe(&self, id: usize) -> Result<&Keyframe> {
        self.keyframes.get(id).ok_or(Error::UnknownKeyframe(id))
    }

    pub fn estimates(&self) -> Vec<Pose2> {
        self.keyframes.iter().map(|k| k.estimate).collect()
    }

    pub fn add_factor(&mut self, f: Factor) -> Result<()> {
        let n = self.keyframes.len();
        if f.from >= n {
            return Err(Error::UnknownKeyframe(f.from));
        }
        if f.to >= n {
            return Err(Error::UnknownKeyframe(f.to));
        }
        if !f.is_valid() {
            return Err(Error::InvalidParameter("information matrix is not SPD".into()));
        }
        self.factors.push(f);
        Ok(())
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    /// Id of the single prior factor's node.
    pub fn prior_node(&self) -> Result<usize> {
        let priors: Vec<&Factor> = self.factors.iter().filter(|f| f.kind == FactorKind::Prior).collect();
        match priors.as_slice() {
            [f] => Ok(f.from),
            other => Err(Error::PriorCount(other.len())),
        }
    }

    pub fn check_connected(&self) -> Result<()> {
        let root = self.prior_node()?;
        let n = self.keyframes.len();
        let mut adj = vec![Vec::new(); n];
        for f in &self.factors {
            if f.kind != FactorKind::Prior {
                adj[f.from].push(f.to);
                adj[f.to].push(f.from);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Disconnected(i)),
            None => Ok(()),
        }
    }

    pub fn cost(&self) -> f64 {
        total_cost(&self.factors, &self.estimates())
    }

    /// Re-estimates every keyframe pose; see [`optimize_poses`].
    pub fn optimize(&mut self, p: &SolverParams) -> Result<OptimizeStats> {
        self.check_connected()?;
        let root = self.prior_node()?;
        let (xs, stats) = optimize_poses(&self.factors, &self.estimates(), root, p);
        for (k, x) in self.keyframes.iter_mut().zip(xs) {
            k.estimate = x;
        }
        self.last_stats = Some(stats);
        Ok(stats)
    }
}

/// `sum_f e_f^T Lambda_f e_f`.
pub fn total_cost(factors: &[Factor], xs: &[Pose2]) -> f64 {
    factors
        .iter()
        .map(|f| {
            let e = Vector3::from(f.error(xs));
            (e.transpose() * f.information_matrix() * e)[(0, 0)]
        })
        .sum()
}

/// Right perturbation `x * exp(d)`.
fn retract(x: &Pose2, d: &[f64]) -> Pose2 {
    x.compose(&Pose2::exp([d[0], d[1], d[2]]))
}

/// Gauss-Newton with numerical Jacobians and Levenberg damping whenever a
/// plain step fails to decrease the cost. The prior node is pinned to its
/// prior value and excluded from the solve.
pub fn optimize_poses(
    factors: &[Factor],
    initial: &[Pose2],
    pinned: usize,
    p: &SolverParams,
) -> (Vec<Pose2>, OptimizeStats) {
    let n = initial.len();
    let mut xs = initial.to_vec();
    if let Some(prior) = factors.iter().find(|f| f.kind == FactorKind::Prior && f.from == pinned) {
        xs[pinned] = prior.relative;
    }
    // Variable slot per node, skipping the pinned one.
    let slot: Vec<Option<usize>> = (0..n)
        .scan(0, |next, i| {
            Some(if i == pinned {
                None
            } else {
                *next += 1;
                Some(*next - 1)
            })
        })
        .collect();
    let dim = 3 * (n.saturating_sub(1));
    let initial_cost = total_cost(factors, &xs);
    let mut cost = initial_cost;
    let mut stats = OptimizeStats {
        iterations: 0,
        initial_cost,
        final_cost: cost,
        converged: dim == 0,
    };
    if dim == 0 {
        return (xs, stats);
    }
    let h = 1e-7;
    let mut lambda = 0.0;
    for it in 0..p.max_iterations {
        stats.iterations = it + 1;
        let mut hmat = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for f in factors {
            let nodes: Vec<usize> = if f.kind == FactorKind::Prior {
                vec![f.from]
            } else {
                vec![f.from, f.to]
            };
            let e0 = Vector3::from(f.error(&xs));
            let info = f.information_matrix();
            let mut jac: Vec<(usize, nalgebra::Matrix3<f64>)> = Vec::new();
            for &node in &nodes {
                let Some(s) = slot[node] else { continue };
                let mut j = Matrix3::zeros();
                for k in 0..3 {
                    let mut d = [0.0; 3];
                    d[k] = h;
                    let mut plus = xs.clone();
                    plus[node] = retract(&xs[node], &d);
                    d[k] = -h;
                    let mut minus = xs.clone();
                    minus[node] = retract(&xs[node], &d);
                    let ep = Vector3::from(f.error(&plus));
                    let em = Vector3::from(f.error(&minus));
                    let mut col = (ep - em) / (2.0 * h);
                    // Keep the yaw difference on the short side of the wrap.
                    col[2] = crate::scalar::wrap_angle(ep[2] - em[2]) / (2.0 * h);
                    j.set_column(k, &col);
                }
                jac.push((s, j));
            }
            for &(si, ji) in &jac {
                let g = ji.transpose() * info * e0;
                for r in 0..3 {
                    b[3 * si + r] -= g[r];
                }
                for &(sj, jj) in &jac {
                    let block = ji.transpose() * info * jj;
                    for r in 0..3 {
                        for c in 0..3 {
                            hmat[(3 * si + r, 3 * sj + c)] += block[(r, c)];
                        }
                    }
                }
            }
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = hmat.clone();
            for d in 0..dim {
                damped[(d, d)] += lambda * (1.0 + hmat[(d, d)]);
            }
            let Some(step) = damped
                .clone()
                .cholesky()
                .map(|c| c.solve(&b))
                .or_else(|| damped.lu().solve(&b))
            else {
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                continue;
            };
            let trial: Vec<Pose2> = (0..n)
                .map(|i| match slot[i] {
                    Some(s) => retract(&xs[i], &[step[3 * s], step[3 * s + 1], step[3 * s + 2]]),
                    None => xs[i],
                })
                .collect();
            let trial_cost = total_cost(factors, &trial);
            if trial_cost <= cost {
                let decrease = cost - trial_cost;
                xs = trial;
                cost = trial_cost;
                accepted = true;
                lambda = if lambda > 0.0 { (lambda / 10.0).max(1e-12) } else { 0.0 };
                if decrease < p.cost_tolerance {
                    stats.converged = true;
                }
                break;
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
        }
        if !accepted {
            // No damping level decreases the cost: a stationary point.
            stats.converged = true;
        }
        if stats.converged {
            break;
        }
    }
    stats.final_cost = cost;
    (xs, stats)
}
