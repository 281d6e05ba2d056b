//! Evaluation metrics, scenario runner and keyframe sweeps.

mod config;
mod scenario;
mod sweep;

pub use config::{ClassifierKind, ScenarioConfig, SweepParams};
pub use scenario::{
    frame_seed, map_with_gate, odometry_noise, perceive, run_scenario, write_run_outputs, CellReport, Frame, GateRun,
    ModeMetrics, Perception, ScenarioOutput,
};
pub use sweep::{sweep_keyframes, write_sweep_outputs, SweepReport};

use crate::error::{Error, Result};
use crate::geometry::voxel_key;
use crate::simworld::{distance_to_scene, Scene};
use crate::PointCloud;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Distinct occupied cells under `floor(coordinate / voxel)` indexing.
pub fn voxel_coverage(map: &PointCloud, voxel: f64) -> usize {
    assert!(voxel > 0.0, "voxel size must be positive");
    map.points
        .iter()
        .map(|p| voxel_key(p, voxel))
        .collect::<HashSet<_>>()
        .len()
}

/// Mean absolute and root-mean-square point-to-surface distance.
pub fn map_error(map: &PointCloud, scene: &Scene) -> Result<(f64, f64)> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    let (mut sum, mut sq) = (0.0, 0.0);
    for p in &map.points {
        let d = distance_to_scene(scene, p)?;
        sum += d;
        sq += d * d;
    }
    let n = map.len() as f64;
    Ok((sum / n, (sq / n).sqrt()))
}

/// Wall-clock samples of one stage, seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub samples: Vec<f64>,
}

impl StageTiming {
    pub fn new(stage: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            samples: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sample standard deviation; zero below two samples.
    pub fn sd(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}
