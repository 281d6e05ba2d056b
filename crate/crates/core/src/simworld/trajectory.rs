//! Scripted ground-truth motion and a drifting dead-reckoning estimate.

use crate::{Pose2, Pose3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Dead-reckoning error model: bias plus white noise on body-frame
/// velocity and yaw rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftParams {
    /// Surge and sway velocity bias, m/s.
    pub velocity_bias: [f64; 2],
    /// Per-sample velocity noise standard deviation, m/s.
    pub velocity_noise: f64,
    /// Yaw-rate bias, rad/s.
    pub yaw_rate_bias: f64,
    /// Per-sample yaw-rate noise standard deviation, rad/s.
    pub yaw_rate_noise: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            velocity_bias: [0.004, -0.003],
            velocity_noise: 0.01,
            yaw_rate_bias: 2.0e-4,
            yaw_rate_noise: 0.002,
        }
    }
}

impl DriftParams {
    pub fn zero() -> Self {
        Self {
            velocity_bias: [0.0, 0.0],
            velocity_noise: 0.0,
            yaw_rate_bias: 0.0,
            yaw_rate_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Vehicle z coordinate in the scene frame, constant along the route.
    pub depth: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// Turn-in-place rate, rad/s.
    pub turn_rate: f64,
    /// Dead-reckoning output rate, Hz.
    pub rate: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            depth: 0.0,
            speed: 0.5,
            turn_rate: 10f64.to_radians(),
            rate: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub true_pose: Pose3,
    pub dr_pose: Pose3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Leg {
    Turn { start: Pose2, delta: f64 },
    Drive { start: Pose2, length: f64 },
}

/// Continuous ground-truth route built from waypoints: turn in place toward
/// the next waypoint, drive straight, and turn to the waypoint heading.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    legs: Vec<(f64, f64, Leg)>,
    params: MotionParams,
}

impl Route {
    pub fn new(waypoints: &[Pose2], params: MotionParams) -> Self {
        assert!(waypoints.len() >= 2, "need at least two waypoints");
        assert!(params.speed > 0.0 && params.turn_rate > 0.0 && params.rate > 0.0);
        let mut legs = Vec::new();
        let mut t = 0.0;
        let mut pose = waypoints[0];
        let push_turn = |legs: &mut Vec<(f64, f64, Leg)>, t: &mut f64, pose: &mut Pose2, target: f64| {
            let delta = crate::scalar::wrap_angle(target - pose.yaw);
            if delta.abs() > 1e-12 {
                let dur = delta.abs() / params.turn_rate;
                legs.push((*t, dur, Leg::Turn { start: *pose, delta }));
                *t += dur;
                *pose = Pose2::new(pose.x, pose.y, pose.yaw + delta);
            }
        };
        for w in &waypoints[1..] {
            let (dx, dy) = (w.x - pose.x, w.y - pose.y);
            let length = dx.hypot(dy);
            if length > 1e-12 {
                push_turn(&mut legs, &mut t, &mut pose, dy.atan2(dx));
                let dur = length / params.speed;
                legs.push((t, dur, Leg::Drive { start: pose, length }));
                t += dur;
                pose = Pose2::new(w.x, w.y, pose.yaw);
            }
            push_turn(&mut legs, &mut t, &mut pose, w.yaw);
        }
        Self { legs, params }
    }

    pub fn duration(&self) -> f64 {
        self.legs.last().map_or(0.0, |(s, d, _)| s + d)
    }

    pub fn length(&self) -> f64 {
        self.legs
            .iter()
            .map(|(_, _, l)| match l {
                Leg::Drive { length, .. } => *length,
                Leg::Turn { .. } => 0.0,
            })
            .sum()
    }

    pub fn params(&self) -> &MotionParams {
        &self.params
    }

    /// Planar ground-truth pose at time `t`, clamped to the route span.
    pub fn pose2_at(&self, t: f64) -> Pose2 {
        let idx = self.legs.partition_point(|(start, _, _)| *start <= t).saturating_sub(1);
        let Some(&(start, dur, leg)) = self.legs.get(idx) else {
            return Pose2::identity();
        };
        let f = ((t - start) / dur).clamp(0.0, 1.0);
        match leg {
            Leg::Turn { start, delta } => Pose2::new(start.x, start.y, start.yaw + f * delta),
            Leg::Drive { start, length } => {
                let (s, c) = start.yaw.sin_cos();
                Pose2::new(start.x + c * f * length, start.y + s * f * length, start.yaw)
            }
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose3 {
        lift(&self.pose2_at(t), self.params.depth)
    }
}

fn lift(p: &Pose2, depth: f64) -> Pose3 {
    Pose3::from_xyz_rpy(p.x, p.y, depth, 0.0, 0.0, p.yaw)
}

/// Samples the route at the dead-reckoning rate and integrates corrupted
/// body-frame velocities. With all drift parameters zero the dead-reckoning
/// pose tracks the true pose.
pub fn simulate_trajectory(
    waypoints: &[Pose2],
    motion: &MotionParams,
    drift: &DriftParams,
    seed: u64,
) -> (Route, Vec<TrajectorySample>) {
    let route = Route::new(waypoints, motion.clone());
    let dt = 1.0 / motion.rate;
    let steps = (route.duration() / dt).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vel_noise = Normal::new(0.0, drift.velocity_noise.max(0.0)).expect("sigma");
    let yaw_noise = Normal::new(0.0, drift.yaw_rate_noise.max(0.0)).expect("sigma");
    let mut samples = Vec::with_capacity(steps + 1);
    let mut prev_true = route.pose2_at(0.0);
    let mut dr = prev_true;
    samples.push(TrajectorySample {
        time: 0.0,
        true_pose: lift(&prev_true, motion.depth),
        dr_pose: lift(&dr, motion.depth),
    });
    for k in 1..=steps {
        let t = k as f64 * dt;
        let truth = route.pose2_at(t);
        let step = prev_true.between(&truth);
        let vx = step.x / dt + drift.velocity_bias[0] + vel_noise.sample(&mut rng);
        let vy = step.y / dt + drift.velocity_bias[1] + vel_noise.sample(&mut rng);
        let wz = step.yaw / dt + drift.yaw_rate_bias + yaw_noise.sample(&mut rng);
        dr = dr.compose(&Pose2::new(vx * dt, vy * dt, wz * dt));
        samples.push(TrajectorySample {
            time: t,
            true_pose: lift(&truth, motion.depth),
            dr_pose: lift(&dr, motion.depth),
        });
        prev_true = truth;
    }
    (route, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Vec<Pose2> {
        vec![Pose2::new(0.0, 0.0, 0.0), Pose2::new(100.0, 0.0, 0.0)]
    }

    #[test]
    fn zero_noise_tracks_truth() {
        let wps = vec![
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(10.0, 0.0, 0.0),
            Pose2::new(10.0, 8.0, 3.0),
            Pose2::new(0.0, 8.0, 0.0),
        ];
        let (_, samples) = simulate_trajectory(&wps, &MotionParams::default(), &DriftParams::zero(), 3);
        assert!(samples.len() > 100);
        for s in &samples {
            assert!(s.true_pose.max_abs_diff(&s.dr_pose) < 1e-9, "t={}", s.time);
        }
    }

    #[test]
    fn yaw_bias_accumulates_linearly() {
        let b = 1e-3;
        let drift = DriftParams {
            yaw_rate_bias: b,
            ..DriftParams::zero()
        };
        let (route, samples) = simulate_trajectory(&line(), &MotionParams::default(), &drift, 0);
        assert!((route.duration() - 200.0).abs() < 1e-9);
        let last = samples.last().unwrap();
        let (_, _, dr_yaw) = last.dr_pose.rpy();
        assert!((dr_yaw - b * last.time).abs() < 1e-9, "{dr_yaw}");
    }

    #[test]
    fn deterministic_and_monotone() {
        let m = MotionParams::default();
        let d = DriftParams::default();
        let (_, a) = simulate_trajectory(&line(), &m, &d, 11);
        let (_, b) = simulate_trajectory(&line(), &m, &d, 11);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1].time > w[0].time));
        assert!(a.iter().all(|s| s.true_pose.translation.z == m.depth));
    }

    #[test]
    fn drift_grows_with_distance() {
        let (_, s) = simulate_trajectory(&line(), &MotionParams::default(), &DriftParams::default(), 5);
        let err = |i: usize| s[i].true_pose.translation.distance(&s[i].dr_pose.translation);
        assert!(err(s.len() - 1) > err(s.len() / 10));
    }

    #[test]
    fn route_turns_then_drives() {
        let wps = vec![Pose2::new(0.0, 0.0, 0.0), Pose2::new(0.0, 5.0, 0.0)];
        let m = MotionParams::default();
        let route = Route::new(&wps, m.clone());
        let turn = std::f64::consts::FRAC_PI_2 / m.turn_rate;
        assert!((route.duration() - (2.0 * turn + 10.0)).abs() < 1e-9);
        let mid = route.pose2_at(turn + 5.0);
        assert!((mid.y - 2.5).abs() < 1e-9 && mid.x.abs() < 1e-9);
        let end = route.pose2_at(route.duration());
        assert!(end.yaw.abs() < 1e-9);
    }
}
