//! Command-line harness: single scenarios, keyframe sweeps, image renders.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use orthosonar::pipeline::{run_scenario, sweep_keyframes, write_run_outputs, write_sweep_outputs, ScenarioConfig};
use orthosonar::simworld::{render_sonar_pair, NoiseParams, SceneFile, SonarRig};
use orthosonar::submap::MapMode;
use orthosonar::Pose3;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "orthosonar",
    version,
    about = "Dense 3D mapping with orthogonal imaging sonars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario at the config's keyframe gate.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// fusion, inference, submap or all.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the keyframe distance x rotation grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel cells; overrides the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render one noisy image pair as `<out>_horizontal.pgm` and `<out>_vertical.pgm`.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// `x,y,z,yaw` with yaw in degrees.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            mode,
            out,
            seed,
        } => {
            let mut cfg = ScenarioConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if mode != "all" {
                cfg.modes = vec![mode.parse::<MapMode>()?];
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = run_scenario(&cfg)?;
            write_run_outputs(&res, &out)?;
            let r = &res.run.report;
            println!("{} frames, {} keyframes", r.frames, r.keyframes);
            for m in &r.modes {
                println!(
                    "{:<11} voxels {:>7}  points {:>7}  mae {:.3} m  rmse {:.3} m",
                    m.mode.name(),
                    m.voxels,
                    m.points,
                    m.mae,
                    m.rmse
                );
            }
            println!(
                "final keyframe error: slam {:.3} m, dead reckoning {:.3} m",
                r.final_error_slam, r.final_error_dr
            );
        }
        Command::Sweep { config, out, workers } => {
            let mut cfg = ScenarioConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(w) = workers {
                cfg.sweep.workers = w;
            }
            let rep = sweep_keyframes(&cfg)?;
            write_sweep_outputs(&rep, &out)?;
            for &mode in &rep.modes {
                println!("{}", mode.name());
                for (r, row) in rep.rotations_deg.iter().zip(rep.coverage_grid(mode)) {
                    let vals: Vec<String> = row
                        .iter()
                        .map(|v| v.map_or("NA".into(), |n| format!("{n:>7}")))
                        .collect();
                    println!("  {r:>5.1} deg {}", vals.join(" "));
                }
            }
            if rep.failures() > 0 {
                eprintln!("{} cells failed; see cells.csv", rep.failures());
            }
        }
        Command::Render { scene, pose, out, seed } => {
            let v: Vec<f64> = pose
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()?;
            let [x, y, z, yaw] = v[..] else {
                bail!("pose must be x,y,z,yaw")
            };
            let scene = SceneFile::load(&scene)?.scene()?;
            let pose = Pose3::from_xyz_rpy(x, y, z, 0.0, 0.0, yaw.to_radians());
            let (h, vimg) = render_sonar_pair(&scene, &pose, &SonarRig::default(), &NoiseParams::default(), seed, 0.0)?;
            let stem = out.to_string_lossy().into_owned();
            h.save_pgm(format!("{stem}_horizontal.pgm"), 1.0)?;
            vimg.save_pgm(format!("{stem}_vertical.pgm"), 1.0)?;
        }
    }
    Ok(())
}
