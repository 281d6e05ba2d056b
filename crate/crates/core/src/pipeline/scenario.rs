use super::config::{ClassifierKind, ScenarioConfig};
use super::{map_error, voxel_coverage, StageTiming};
use crate::detect::{
    classify, extract_instances, leading_edge_cloud, soca_cfar, Classifier, DetectionMask, HeuristicClassifier,
    OracleClassifier,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_frame, fused_cloud, FusedPoint};
use crate::inference::{infer_frame, InferenceParams, InferenceStats, ModelBank};
use crate::simworld::{render_sonar_pair, simulate_trajectory, DriftParams, MotionParams, Scene, SonarImage};
use crate::slam::{write_trajectory_csv, Factor, Keyframe, OdometryNoise, Slam, SlamCounters, SlamParams};
use crate::submap::{assemble_map, write_ply, DeadReckoning, MapMode, Submap};
use crate::{PointCloud, Pose3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Gate-independent products of one sonar frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub time: f64,
    pub true_pose: Pose3,
    pub dr_pose: Pose3,
    /// Horizontal detections and their raw intensities.
    pub h_cells: Vec<(usize, usize)>,
    pub h_values: Vec<f64>,
    /// Leading-edge horizontal detections at zero elevation, body frame.
    pub planar: PointCloud,
    pub fused: Vec<FusedPoint>,
    /// Fused points plus height predictions, when inference runs.
    pub inferred: Option<PointCloud>,
    pub inference: InferenceStats,
}

/// Rendering, detection, fusion and inference for a whole route. Keyframe
/// gates do not change any of it, so one perception pass serves a whole sweep.
#[derive(Clone, Debug)]
pub struct Perception {
    pub scene: Scene,
    pub frames: Vec<Frame>,
    pub dr: DeadReckoning,
    /// Class models after the last frame.
    pub bank: ModelBank,
    pub timings: Vec<StageTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: MapMode,
    pub voxels: usize,
    pub points: usize,
    /// NaN for an empty map.
    pub mae: f64,
    pub rmse: f64,
}

/// Metrics of one keyframe gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub distance: f64,
    /// Radians.
    pub rotation: f64,
    pub frames: usize,
    pub keyframes: usize,
    pub modes: Vec<ModeMetrics>,
    /// Final-keyframe planar translation error of the optimized estimate
    /// and of dead reckoning alone.
    pub final_error_slam: f64,
    pub final_error_dr: f64,
    pub slam: SlamCounters,
    pub inference: InferenceStats,
    pub timings: Vec<StageTiming>,
}

impl CellReport {
    pub fn mode(&self, mode: MapMode) -> Option<&ModeMetrics> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn coverage(&self, mode: MapMode) -> Option<usize> {
        self.mode(mode).map(|m| m.voxels)
    }

    pub fn timing(&self, stage: &str) -> Option<&StageTiming> {
        self.timings.iter().find(|t| t.stage == stage)
    }
}

/// Everything produced by mapping one perception pass at one gate.
#[derive(Clone, Debug)]
pub struct GateRun {
    pub report: CellReport,
    pub maps: BTreeMap<MapMode, PointCloud>,
    pub keyframes: Vec<Keyframe>,
    /// True pose of each keyframe.
    pub truth: Vec<Pose3>,
    pub factors: Vec<Factor>,
    pub submaps: Vec<Submap>,
    pub bank: ModelBank,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub run: GateRun,
}

/// Noise seed of frame `k`, decorrelated from neighbouring frames.
pub fn frame_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn process_frame(
    cfg: &ScenarioConfig,
    scene: &Scene,
    k: usize,
    time: f64,
    true_pose: Pose3,
    dr_pose: Pose3,
) -> Result<(Frame, [f64; 3])> {
    let t = Instant::now();
    let (h, v) = render_sonar_pair(scene, &true_pose, &cfg.rig, &cfg.noise, frame_seed(cfg.seed, k), time)
        .map_err(Error::stage("render"))?;
    let t_render = secs(t);
    let t = Instant::now();
    let hm = soca_cfar(&h, &cfg.cfar).map_err(Error::stage("cfar"))?;
    let vm = soca_cfar(&v, &cfg.cfar).map_err(Error::stage("cfar"))?;
    let t_cfar = secs(t);
    let t = Instant::now();
    let fused = fuse_frame(&h, &hm, &v, &vm, &cfg.fusion).map_err(Error::stage("fusion"))?;
    let t_fusion = secs(t);
    let frame = Frame {
        index: k,
        time,
        true_pose,
        dr_pose,
        h_values: hm.cells().iter().map(|&(r, c)| h.get(r, c)).collect(),
        h_cells: hm.cells().to_vec(),
        planar: leading_edge_cloud(&hm, &h, cfg.slam.scan_support),
        fused,
        inferred: None,
        inference: InferenceStats::default(),
    };
    Ok((frame, [t_render, t_cfar, t_fusion]))
}

/// Simulates the route and runs rendering, CFAR and fusion on every frame,
/// then, when requested, inference frame by frame in time order.
pub fn perceive(cfg: &ScenarioConfig) -> Result<Perception> {
    cfg.validate()?;
    let file = cfg.load_scene().map_err(Error::stage("scene"))?;
    let scene = file.scene().map_err(Error::stage("scene"))?;
    let route = cfg.route_for(&file)?;
    let motion = MotionParams {
        depth: route.depth,
        speed: route.speed,
        turn_rate: route.turn_rate_deg.to_radians(),
        rate: cfg.rig.horizontal.rate,
    };
    let (_, samples) = simulate_trajectory(&route.waypoint_poses(), &motion, &cfg.drift, cfg.seed);
    let results: Vec<Result<(Frame, [f64; 3])>> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| process_frame(cfg, &scene, k, s.time, s.true_pose, s.dr_pose))
        .collect();
    let mut timings = ["render", "cfar", "fusion"].map(StageTiming::new);
    let mut frames = Vec::with_capacity(results.len());
    for r in results {
        let (f, t) = r?;
        for (timing, v) in timings.iter_mut().zip(t) {
            timing.samples.push(v);
        }
        frames.push(f);
    }
    let mut timings = timings.to_vec();
    let mut bank = ModelBank::default();
    if cfg.wants(MapMode::Inference) {
        // The class models learn from every frame; each frame's output
        // depends on all earlier ones, so this pass is sequential.
        let params = cfg.inference_params();
        let mut t_infer = StageTiming::new("inference");
        for f in &mut frames {
            let t = Instant::now();
            let (c, st) =
                infer_frame_detections(cfg, &scene, f, &mut bank, &params).map_err(Error::stage("inference"))?;
            t_infer.samples.push(secs(t));
            f.inferred = Some(c);
            f.inference = st;
        }
        timings.push(t_infer);
    }
    let dr = DeadReckoning::new(samples.iter().map(|s| (s.time, s.dr_pose)).collect())?;
    Ok(Perception {
        scene,
        frames,
        dr,
        bank,
        timings,
    })
}

/// Clusters, labels and lifts one frame's horizontal detections.
fn infer_frame_detections(
    cfg: &ScenarioConfig,
    scene: &Scene,
    frame: &Frame,
    bank: &mut ModelBank,
    params: &InferenceParams,
) -> Result<(PointCloud, InferenceStats)> {
    let mut img = SonarImage::zeros(cfg.rig.horizontal.clone(), frame.time);
    for (&(r, c), &v) in frame.h_cells.iter().zip(&frame.h_values) {
        img.set(r, c, v);
    }
    let mask = DetectionMask::from_cells(img.rows(), img.cols(), &frame.h_cells);
    let mut instances = extract_instances(&mask, &img, &cfg.instance);
    let oracle;
    let heuristic = HeuristicClassifier;
    let classifier: &dyn Classifier = match cfg.classifier {
        ClassifierKind::Oracle => {
            oracle = OracleClassifier {
                scene,
                gate: cfg.label_gate,
                known_classes: cfg.known_classes.clone(),
            };
            &oracle
        }
        ClassifierKind::Heuristic => &heuristic,
    };
    for inst in &mut instances {
        let (label, conf) = classify(
            inst,
            &img,
            &frame.true_pose,
            classifier,
            cfg.instance.confidence_threshold,
        );
        inst.label = label;
        inst.confidence = conf;
    }
    let overlap_bearing = cfg.rig.overlap_half_angles().0;
    infer_frame(&img, &instances, &frame.fused, overlap_bearing, bank, params)
}

/// Dead-reckoning factor noise matching the simulated drift at `rate` Hz.
pub fn odometry_noise(drift: &DriftParams, rate: f64) -> OdometryNoise {
    let root_dt = (1.0 / rate).sqrt();
    OdometryNoise {
        bias: [
            drift.velocity_bias[0].abs(),
            drift.velocity_bias[1].abs(),
            drift.yaw_rate_bias.abs(),
        ],
        white: [
            drift.velocity_noise * root_dt,
            drift.velocity_noise * root_dt,
            drift.yaw_rate_noise * root_dt,
        ],
        ..OdometryNoise::default()
    }
}

fn planar_error(a: &Pose3, b: &Pose3) -> f64 {
    (a.translation.x - b.translation.x).hypot(a.translation.y - b.translation.y)
}

/// Keyframing, SLAM, inference and submapping over a perception pass, then
/// map assembly for every requested mode from the one trajectory estimate.
pub fn map_with_gate(cfg: &ScenarioConfig, p: &Perception, distance: f64, rotation: f64) -> Result<GateRun> {
    let mut params = SlamParams {
        keyframe_distance: distance,
        keyframe_rotation: rotation,
        ..cfg.slam.clone()
    };
    if params.odometry.is_none() {
        params.odometry = Some(odometry_noise(&cfg.drift, cfg.rig.horizontal.rate));
    }
    let mut slam = Slam::new(params);
    let mut inferred = BTreeMap::new();
    let mut truth = Vec::new();
    let mut submaps = Vec::new();
    let mut current: Option<(Submap, f64)> = None;
    let mut t_slam = StageTiming::new("slam");
    let mut t_submap = StageTiming::new("submap");

    for f in &p.frames {
        let cloud = fused_cloud(&f.fused);
        if slam.wants_keyframe(&f.dr_pose) {
            if let Some((mut sm, s)) = current.take() {
                sm.close();
                t_submap.samples.push(s);
                submaps.push(sm);
            }
            let t = Instant::now();
            let id = slam
                .add_keyframe(f.time, &f.dr_pose, f.planar.clone(), cloud.clone())
                .map_err(Error::stage("slam"))?;
            t_slam.samples.push(secs(t));
            truth.push(f.true_pose);
            if let Some(c) = &f.inferred {
                inferred.insert(id, c.clone());
            }
            let t = Instant::now();
            let mut sm = Submap::new(id, f.time, f.dr_pose);
            sm.accumulate(cloud, f.time, &p.dr).map_err(Error::stage("submap"))?;
            current = Some((sm, secs(t)));
        } else if let Some((sm, s)) = current.as_mut() {
            let t = Instant::now();
            sm.accumulate(cloud, f.time, &p.dr).map_err(Error::stage("submap"))?;
            *s += secs(t);
        }
    }
    if let Some((mut sm, s)) = current.take() {
        sm.close();
        t_submap.samples.push(s);
        submaps.push(sm);
    }

    let poses: BTreeMap<usize, Pose3> = slam.poses_6dof().into_iter().enumerate().collect();
    let fused: BTreeMap<usize, PointCloud> = slam
        .graph
        .keyframes
        .iter()
        .map(|k| (k.id, k.fused_cloud.clone()))
        .collect();
    let mut maps = BTreeMap::new();
    let mut modes = Vec::new();
    let mut t_assembly = StageTiming::new("assembly");
    for mode in MapMode::ALL.into_iter().filter(|m| cfg.wants(*m)) {
        let t = Instant::now();
        let map = match mode {
            MapMode::Fusion => assemble_map(&poses, &fused, &[], mode),
            MapMode::Inference => assemble_map(&poses, &inferred, &[], mode),
            MapMode::Submapping => assemble_map(&poses, &BTreeMap::new(), &submaps, mode),
        }
        .map_err(Error::stage("assembly"))?;
        t_assembly.samples.push(secs(t));
        let (mae, rmse) = if map.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            map_error(&map, &p.scene)?
        };
        modes.push(ModeMetrics {
            mode,
            voxels: voxel_coverage(&map, cfg.voxel),
            points: map.len(),
            mae,
            rmse,
        });
        maps.insert(mode, map);
    }

    let keyframes = slam.graph.keyframes.clone();
    let (final_error_slam, final_error_dr) = match (keyframes.last(), truth.last()) {
        (Some(k), Some(tp)) => (
            planar_error(&k.lift_to_6dof(), tp),
            planar_error(&k.dr_pose.to_pose3(), tp),
        ),
        _ => (0.0, 0.0),
    };
    let mut inference = InferenceStats::default();
    for f in &p.frames {
        inference.instances_used += f.inference.instances_used;
        inference.registration_failures += f.inference.registration_failures;
        inference.updates += f.inference.updates;
        inference.predicted += f.inference.predicted;
    }
    let mut timings = p.timings.clone();
    timings.extend([t_slam, t_submap, t_assembly]);
    let report = CellReport {
        distance,
        rotation,
        frames: p.frames.len(),
        keyframes: keyframes.len(),
        modes,
        final_error_slam,
        final_error_dr,
        slam: slam.counters,
        inference,
        timings,
    };
    Ok(GateRun {
        report,
        maps,
        keyframes,
        truth,
        factors: slam.graph.factors,
        submaps,
        bank: p.bank.clone(),
    })
}

/// Full pipeline at the config's own keyframe gate.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    let p = perceive(cfg)?;
    let run = map_with_gate(cfg, &p, cfg.slam.keyframe_distance, cfg.slam.keyframe_rotation)?;
    Ok(ScenarioOutput { run })
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

/// `coverage.csv`, `error.csv`, `runtime.csv`, `map_<mode>.ply`,
/// `trajectory.csv` and, with inference, `models.json`.
pub fn write_run_outputs(out: &ScenarioOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = &out.run.report;
    let gate = format!("{:.3},{:.1}", r.distance, r.rotation.to_degrees());
    let mut f = create(dir, "coverage.csv")?;
    writeln!(f, "mode,distance_m,rotation_deg,voxels")?;
    for m in &r.modes {
        writeln!(f, "{},{gate},{}", m.mode.name(), m.voxels)?;
    }
    f.flush()?;
    let mut f = create(dir, "error.csv")?;
    writeln!(f, "mode,distance_m,rotation_deg,points,mae_m,rmse_m")?;
    for m in &r.modes {
        writeln!(f, "{},{gate},{},{:.6},{:.6}", m.mode.name(), m.points, m.mae, m.rmse)?;
    }
    f.flush()?;
    let mut f = create(dir, "runtime.csv")?;
    writeln!(f, "stage,count,mean_s,sd_s")?;
    for t in &r.timings {
        writeln!(f, "{},{},{:.6},{:.6}", t.stage, t.count(), t.mean(), t.sd())?;
    }
    f.flush()?;
    for (mode, map) in &out.run.maps {
        let mut f = create(dir, &format!("map_{}.ply", mode.name()))?;
        write_ply(map, &mut f)?;
        f.flush()?;
    }
    let mut f = create(dir, "trajectory.csv")?;
    write_trajectory_csv(&out.run.keyframes, &mut f)?;
    f.flush()?;
    if out.run.maps.contains_key(&MapMode::Inference) {
        let mut f = create(dir, "models.json")?;
        out.run.bank.write_json(&mut f)?;
        f.flush()?;
    }
    Ok(())
}
