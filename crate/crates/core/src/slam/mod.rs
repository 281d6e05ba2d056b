//! Keyframe pose SLAM in the plane.
//!
//! Each keyframe is tied to its predecessor by dead reckoning plus, when ICP
//! succeeds, a sequential scan-match factor; after a revisit, to older
//! keyframes by non-sequential scan-match factors screened with PCM.

mod graph;
mod icp;
mod pcm;

pub use graph::{
    diagonal_information, lift_to_6dof, optimize_poses, total_cost, Factor, FactorKind, Keyframe, OptimizeStats,
    PoseGraph, SolverParams,
};
pub use icp::{align_pairs, icp_2d, icp_indexed, planar_points, IcpParams, IcpResult, IcpStatus, NearestIndex};
pub use pcm::{consistency_matrix, max_clique, pairwise_distance, pcm_filter, pcm_select};

use crate::error::Result;
use crate::geometry::voxel_downsample;
use crate::{PointCloud, Pose2, Pose3};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamParams {
    pub keyframe_distance: f64,
    /// Radians.
    pub keyframe_rotation: f64,
    pub icp: IcpParams,
    /// Range bins within which a leading-edge detection needs a neighbor.
    pub scan_support: usize,
    /// Planar clouds are thinned to this voxel size before registration.
    pub icp_voxel: f64,
    /// Sigmas (x, y, yaw) of scan-match factors.
    pub icp_sigmas: [f64; 3],
    /// Dead-reckoning factor noise; `None` takes [`OdometryNoise::default`].
    pub odometry: Option<OdometryNoise>,
    /// Sigmas (x, y, yaw) per keyframe step of the chains PCM closes cycles
    /// through; `None` uses the odometry noise over the mean step duration.
    pub pcm_step_sigmas: Option<[f64; 3]>,
    pub prior_sigmas: [f64; 3],
    /// A sequential match further than this from dead reckoning (meters,
    /// radians) is treated as an ICP failure.
    pub ssm_max_deviation: [f64; 2],
    /// Most recent keyframes left out of loop-closure search.
    pub nssm_exclusion: usize,
    pub nssm_search_radius: f64,
    /// Older keyframes facing further away than this (radians) are left out
    /// of loop-closure search: first returns show only the near side of a
    /// structure, so opposite views of it do not overlap.
    pub nssm_max_heading_difference: f64,
    pub nssm_min_points: usize,
    pub nssm_fitness_min: f64,
    pub pcm_threshold: f64,
    /// Loop-closure candidates kept for joint consistency checks.
    pub pcm_queue: usize,
    /// Smallest consistent set accepted into the graph.
    pub pcm_min_clique: usize,
    pub solver: SolverParams,
}

impl Default for SlamParams {
    fn default() -> Self {
        Self {
            keyframe_distance: 1.0,
            keyframe_rotation: 30f64.to_radians(),
            icp: IcpParams {
                refine: vec![0.4, 0.2],
                ..IcpParams::default()
            },
            scan_support: 2,
            icp_voxel: 0.1,
            icp_sigmas: [0.1, 0.1, 0.02],
            odometry: None,
            pcm_step_sigmas: None,
            prior_sigmas: [1e-3, 1e-3, 1e-4],
            ssm_max_deviation: [0.3, 0.1],
            nssm_exclusion: 10,
            nssm_search_radius: 10.0,
            nssm_max_heading_difference: std::f64::consts::FRAC_PI_2,
            nssm_min_points: 30,
            nssm_fitness_min: 0.8,
            pcm_threshold: 3.5,
            pcm_queue: 10,
            pcm_min_clique: 2,
            solver: SolverParams::default(),
        }
    }
}

/// Growth of dead-reckoning error with elapsed time, per axis (x, y, yaw).
///
/// Bias grows linearly and white noise with the square root of the
/// interval; `floor` keeps the information finite for perfect odometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    /// Per second.
    pub bias: [f64; 3],
    /// Per square-root second.
    pub white: [f64; 3],
    pub floor: [f64; 3],
}

impl Default for OdometryNoise {
    fn default() -> Self {
        // The simulator's default drift at 5 Hz.
        let root_dt = 0.2f64.sqrt();
        Self {
            bias: [0.004, 0.003, 2.0e-4],
            white: [0.01 * root_dt, 0.01 * root_dt, 0.002 * root_dt],
            floor: [1e-3, 1e-3, 1e-4],
        }
    }
}

impl OdometryNoise {
    /// Sigmas of a dead-reckoning increment spanning `duration` seconds.
    pub fn sigmas(&self, duration: f64) -> [f64; 3] {
        let t = duration.abs();
        std::array::from_fn(|i| (self.bias[i] * t).hypot(self.white[i] * t.sqrt()).hypot(self.floor[i]))
    }
}

/// Distance gate is inclusive: moving exactly `d_thresh` creates a keyframe.
pub fn should_create_keyframe(current_dr: &Pose2, last_kf_dr: &Pose2, d_thresh: f64, r_thresh: f64) -> bool {
    let dist = (current_dr.x - last_kf_dr.x).hypot(current_dr.y - last_kf_dr.y);
    // Unwrapped difference so that the boundary case compares exactly.
    let mut dyaw = (current_dr.yaw - last_kf_dr.yaw).abs();
    if dyaw > std::f64::consts::PI {
        dyaw = std::f64::consts::TAU - dyaw;
    }
    dist >= d_thresh || dyaw >= r_thresh
}

/// Loop-closure candidates for keyframe `current` against the aggregated
/// clouds of older keyframes near its estimate.
///
/// The current planar cloud is registered in the world frame against the
/// union of eligible keyframe clouds; the factor attaches to the eligible
/// keyframe nearest the registered pose.
pub fn propose_nssm(
    graph: &PoseGraph,
    current: usize,
    exclusion: usize,
    search_radius: f64,
    p: &SlamParams,
) -> Vec<Factor> {
    if current >= graph.len() || current <= exclusion {
        return Vec::new();
    }
    let cur = &graph.keyframes[current];
    let eligible: Vec<usize> = (0..current - exclusion)
        .filter(|&j| {
            let e = &graph.keyframes[j].estimate;
            (e.x - cur.estimate.x).hypot(e.y - cur.estimate.y) <= search_radius
                && e.between(&cur.estimate).yaw.abs() <= p.nssm_max_heading_difference
        })
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let mut world = Vec::new();
    for &j in &eligible {
        let kf = &graph.keyframes[j];
        for q in planar_points(&voxel_downsample(&kf.planar_cloud, p.icp_voxel)) {
            let (x, y) = kf.estimate.transform_xy(q[0], q[1]);
            world.push([x, y]);
        }
    }
    let source = planar_points(&voxel_downsample(&cur.planar_cloud, p.icp_voxel));
    if world.len() < p.nssm_min_points || source.len() < p.nssm_min_points {
        return Vec::new();
    }
    let index = NearestIndex::new(world, p.icp.max_correspondence);
    let r = icp_indexed(&source, &index, cur.estimate, &p.icp);
    // A slow slide along a partially overlapping structure ends at the
    // iteration cap; only a settled alignment counts as a closure.
    if r.status != IcpStatus::Converged || r.fitness < p.nssm_fitness_min {
        return Vec::new();
    }
    let anchor = eligible
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let d = |j: usize| {
                let e = &graph.keyframes[j].estimate;
                (e.x - r.pose.x).hypot(e.y - r.pose.y)
            };
            d(a).total_cmp(&d(b)).then(a.cmp(&b))
        })
        .expect("eligible is nonempty");
    let z = graph.keyframes[anchor].estimate.between(&r.pose);
    vec![Factor::between(FactorKind::Nssm, anchor, current, z, p.icp_sigmas)]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlamCounters {
    pub ssm_accepted: usize,
    pub ssm_failed: usize,
    pub nssm_candidates: usize,
    pub nssm_accepted: usize,
}

/// Incremental front-end around a [`PoseGraph`].
#[derive(Clone, Debug)]
pub struct Slam {
    pub params: SlamParams,
    pub graph: PoseGraph,
    pub counters: SlamCounters,
    /// When false only dead-reckoning factors are added.
    pub perception: bool,
    queue: Vec<Factor>,
}

impl Slam {
    pub fn new(params: SlamParams) -> Self {
        Self {
            params,
            graph: PoseGraph::new(),
            counters: SlamCounters::default(),
            perception: true,
            queue: Vec::new(),
        }
    }

    pub fn last_keyframe(&self) -> Option<&Keyframe> {
        self.graph.keyframes.last()
    }

    /// Keyframe gate against the most recent keyframe; true before the first.
    pub fn wants_keyframe(&self, dr: &Pose3) -> bool {
        match self.last_keyframe() {
            None => true,
            Some(k) => should_create_keyframe(
                &dr.to_pose2(),
                &k.dr_pose,
                self.params.keyframe_distance,
                self.params.keyframe_rotation,
            ),
        }
    }

    /// Adds a keyframe with its factors and re-optimizes. Returns its id.
    pub fn add_keyframe(
        &mut self,
        time: f64,
        dr: &Pose3,
        planar_cloud: PointCloud,
        fused_cloud: PointCloud,
    ) -> Result<usize> {
        let dr2 = dr.to_pose2();
        let (roll, pitch, _) = dr.rpy();
        let id = self.graph.len();
        let estimate = match self.last_keyframe() {
            None => dr2,
            Some(prev) => prev.estimate.compose(&prev.dr_pose.between(&dr2)),
        };
        self.graph.keyframes.push(Keyframe {
            id,
            time,
            dr_pose: dr2,
            estimate,
            planar_cloud,
            fused_cloud,
            depth: dr.translation.z,
            roll,
            pitch,
        });
        if id == 0 {
            self.graph.add_factor(Factor::prior(0, dr2, self.params.prior_sigmas))?;
            self.graph.optimize(&self.params.solver)?;
            return Ok(0);
        }
        self.add_sequential(id)?;
        if self.perception {
            self.add_loop_closures(id)?;
        }
        self.graph.optimize(&self.params.solver)?;
        Ok(id)
    }

    fn add_sequential(&mut self, id: usize) -> Result<()> {
        let p = &self.params;
        let (prev, cur) = (&self.graph.keyframes[id - 1], &self.graph.keyframes[id]);
        let odo = prev.dr_pose.between(&cur.dr_pose);
        let matched = self.perception.then(|| {
            let src = voxel_downsample(&cur.planar_cloud, p.icp_voxel);
            let tgt = voxel_downsample(&prev.planar_cloud, p.icp_voxel);
            icp_2d(&src, &tgt, odo, &p.icp)
        });
        let sigmas = p.odometry.clone().unwrap_or_default().sigmas(cur.time - prev.time);
        let odometry = Factor::between(FactorKind::Odometry, id - 1, id, odo, sigmas);
        match matched {
            Some(r)
                if r.ok() && {
                    let dev = odo.between(&r.pose);
                    dev.translation_norm() <= p.ssm_max_deviation[0] && dev.yaw.abs() <= p.ssm_max_deviation[1]
                } =>
            {
                self.counters.ssm_accepted += 1;
                let ssm = Factor::between(FactorKind::Ssm, id - 1, id, r.pose, p.icp_sigmas);
                self.graph.add_factor(odometry)?;
                self.graph.add_factor(ssm)
            }
            _ => {
                if self.perception {
                    self.counters.ssm_failed += 1;
                }
                self.graph.add_factor(odometry)
            }
        }
    }

    fn add_loop_closures(&mut self, id: usize) -> Result<()> {
        let p = &self.params;
        let found = propose_nssm(&self.graph, id, p.nssm_exclusion, p.nssm_search_radius, p);
        self.counters.nssm_candidates += found.len();
        self.queue.extend(found);
        if self.queue.len() > p.pcm_queue {
            let drop = self.queue.len() - p.pcm_queue;
            self.queue.drain(..drop);
        }
        let step = p.pcm_step_sigmas.unwrap_or_else(|| {
            let kfs = &self.graph.keyframes;
            let mean_dt = (kfs[id].time - kfs[0].time) / id as f64;
            p.odometry.clone().unwrap_or_default().sigmas(mean_dt)
        });
        let cov = Matrix3::from_diagonal(&Vector3::from(step.map(|s| s * s)));
        let chosen = pcm_select(&self.queue, &self.graph.estimates(), &cov, p.pcm_threshold);
        if chosen.len() >= p.pcm_min_clique.max(1) {
            for &i in &chosen {
                self.graph.add_factor(self.queue[i].clone())?;
                self.counters.nssm_accepted += 1;
            }
            let mut k = 0;
            self.queue.retain(|_| {
                k += 1;
                !chosen.contains(&(k - 1))
            });
        }
        Ok(())
    }

    /// Keyframe poses with depth, roll and pitch restored.
    pub fn poses_6dof(&self) -> Vec<Pose3> {
        self.graph.keyframes.iter().map(lift_to_6dof).collect()
    }
}

/// One CSV row per keyframe: time, kf_id, x, y, yaw, depth, roll, pitch.
pub fn write_trajectory_csv(keyframes: &[Keyframe], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "time,kf_id,x,y,yaw,depth,roll,pitch")?;
    for k in keyframes {
        let e = &k.estimate;
        writeln!(
            out,
            "{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            k.time, k.id, e.x, e.y, e.yaw, k.depth, k.roll, k.pitch
        )?;
    }
    Ok(())
}
