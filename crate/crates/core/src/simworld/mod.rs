//! Deterministic synthetic world: primitive scenes, orthogonal sonar
//! rendering and drifting dead-reckoning trajectories.

mod config;
mod render;
mod scene;
mod trajectory;

pub use config::{Mount, NoiseParams, SonarConfig, SonarRig};
pub use render::{apply_noise, render_clean, render_sonar_pair, SonarImage};
pub use scene::{
    distance_to_scene, oracle_label, GroundTruthLabel, Hit, Primitive, RouteSpec, Scene, SceneFile, Shape,
    DEFAULT_LABEL_GATE,
};
pub use trajectory::{simulate_trajectory, DriftParams, MotionParams, Route, TrajectorySample};
