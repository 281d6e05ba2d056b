use crate::detect::{CfarParams, InstanceParams};
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::inference::InferenceParams;
use crate::simworld::{DriftParams, NoiseParams, RouteSpec, SceneFile, SonarRig, DEFAULT_LABEL_GATE};
use crate::slam::SlamParams;
use crate::submap::MapMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    /// Ground-truth labels from the scene, filtered by `known_classes`.
    #[default]
    Oracle,
    /// Extent rules on the cluster shape.
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    /// Keyframe distance gates, meters.
    pub distances: Vec<f64>,
    /// Keyframe rotation gates, degrees.
    pub rotations_deg: Vec<f64>,
    /// Parallel cells; 0 uses every available core.
    pub workers: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            distances: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            rotations_deg: vec![30.0, 60.0, 90.0],
            workers: 0,
        }
    }
}

/// One simulated mission. Every block may be omitted or partially given;
/// missing keys take their defaults. `[rig]`, when present, must be complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scene file; relative paths resolve against the config file.
    pub scene: PathBuf,
    /// Replaces the scene's own route.
    pub route: Option<RouteSpec>,
    /// Seeds the image noise of every frame and the dead-reckoning drift.
    pub seed: u64,
    pub modes: Vec<MapMode>,
    pub rig: SonarRig,
    pub noise: NoiseParams,
    pub drift: DriftParams,
    pub cfar: CfarParams,
    pub fusion: FusionParams,
    pub instance: InstanceParams,
    pub classifier: ClassifierKind,
    pub known_classes: Vec<String>,
    /// Oracle label gate, meters.
    pub label_gate: f64,
    /// Defaults derive from the horizontal sonar when absent.
    pub inference: Option<InferenceParams>,
    /// Keyframe gate and back-end; `keyframe_rotation` is in radians.
    pub slam: SlamParams,
    /// Coverage voxel edge, meters.
    pub voxel: f64,
    pub sweep: SweepParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::new(),
            route: None,
            seed: 1,
            modes: MapMode::ALL.to_vec(),
            rig: SonarRig::default(),
            noise: NoiseParams::default(),
            drift: DriftParams::default(),
            cfar: CfarParams::default(),
            fusion: FusionParams::default(),
            instance: InstanceParams::default(),
            classifier: ClassifierKind::Oracle,
            known_classes: vec!["piling".into()],
            label_gate: DEFAULT_LABEL_GATE,
            inference: None,
            slam: SlamParams::default(),
            voxel: 0.1,
            sweep: SweepParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "scenario config".into(),
            message: e.to_string(),
        })
    }

    /// Reads a config and resolves its scene path against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                what: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        if cfg.scene.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.scene = dir.join(&cfg.scene);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn inference_params(&self) -> InferenceParams {
        self.inference
            .clone()
            .unwrap_or_else(|| InferenceParams::for_sonar(&self.rig.horizontal))
    }

    pub fn wants(&self, mode: MapMode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        self.rig.validate()?;
        self.cfar.validate()?;
        self.fusion.validate()?;
        if self.modes.is_empty() {
            return bad("no map modes requested".into());
        }
        if !(self.voxel > 0.0) {
            return bad("voxel must be positive".into());
        }
        if !(self.slam.keyframe_distance > 0.0 && self.slam.keyframe_rotation > 0.0) {
            return bad("keyframe gates must be positive".into());
        }
        if self.instance.eps <= 0.0 || self.instance.min_pts == 0 {
            return bad("instance eps and min_pts must be positive".into());
        }
        if let Some(r) = &self.route {
            if r.waypoints.len() < 2 || !(r.speed > 0.0) {
                return bad("route needs two waypoints and a positive speed".into());
            }
        }
        if self
            .sweep
            .distances
            .iter()
            .chain(&self.sweep.rotations_deg)
            .any(|v| !(*v > 0.0))
        {
            return bad("sweep gates must be positive".into());
        }
        Ok(())
    }

    /// Scene file named by the config, checked.
    pub fn load_scene(&self) -> Result<SceneFile> {
        if !self.scene.is_file() {
            return Err(Error::InvalidParameter(format!(
                "scene file `{}` not found",
                self.scene.display()
            )));
        }
        SceneFile::load(&self.scene)
    }

    /// Route override, else the scene's own route.
    pub fn route_for(&self, scene: &SceneFile) -> Result<RouteSpec> {
        self.route
            .clone()
            .or_else(|| scene.route.clone())
            .ok_or_else(|| Error::InvalidParameter("scene has no route and the config gives none".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_blocks_keep_defaults() {
        let cfg = ScenarioConfig::parse(
            "scene = \"s.toml\"\nmodes = [\"fusion\", \"submap\"]\n[cfar]\np_fa = 0.001\n[slam]\nkeyframe_distance = 3.0\n",
        )
        .unwrap();
        assert_eq!(cfg.modes, vec![MapMode::Fusion, MapMode::Submapping]);
        assert_eq!(cfg.cfar.p_fa, 1e-3);
        assert_eq!(cfg.cfar.train_cells, CfarParams::default().train_cells);
        assert_eq!(cfg.slam.keyframe_distance, 3.0);
        assert_eq!(cfg.slam.pcm_threshold, SlamParams::default().pcm_threshold);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let cfg = ScenarioConfig {
            scene: "a.toml".into(),
            ..Default::default()
        };
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert!(ScenarioConfig::parse("sead = 3").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.modes.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.fusion.patch_size = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.scene = "/nonexistent/scene.toml".into();
        assert!(cfg.load_scene().is_err());
    }
}
