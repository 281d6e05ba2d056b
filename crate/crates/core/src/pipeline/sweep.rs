use super::config::ScenarioConfig;
use super::scenario::{map_with_gate, perceive, CellReport};
use crate::error::{Error, Result};
use crate::submap::MapMode;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub distance: f64,
    pub rotation_deg: f64,
    /// A failed cell keeps its message; the sweep goes on.
    pub result: std::result::Result<CellReport, String>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub distances: Vec<f64>,
    pub rotations_deg: Vec<f64>,
    pub modes: Vec<MapMode>,
    /// Row-major over rotations, then distances.
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, distance: f64, rotation_deg: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.distance == distance && c.rotation_deg == rotation_deg)
            .and_then(|c| c.result.as_ref().ok())
    }

    pub fn reports(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter_map(|c| c.result.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    /// Coverage per cell of `mode`, rows = rotations, columns = distances.
    pub fn coverage_grid(&self, mode: MapMode) -> Vec<Vec<Option<usize>>> {
        self.rotations_deg
            .iter()
            .map(|&r| {
                self.distances
                    .iter()
                    .map(|&d| self.cell(d, r).and_then(|c| c.coverage(mode)))
                    .collect()
            })
            .collect()
    }
}

/// Runs every (distance, rotation) gate of `cfg.sweep` over one shared
/// perception pass. Cells run in parallel; results come back in grid order.
pub fn sweep_keyframes(cfg: &ScenarioConfig) -> Result<SweepReport> {
    let p = perceive(cfg)?;
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .rotations_deg
        .iter()
        .flat_map(|&r| cfg.sweep.distances.iter().map(move |&d| (d, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.sweep.workers > 0 {
        builder = builder.num_threads(cfg.sweep.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let cells = pool.install(|| {
        grid.par_iter()
            .map(|&(d, r)| SweepCell {
                distance: d,
                rotation_deg: r,
                result: map_with_gate(cfg, &p, d, r.to_radians())
                    .map(|g| g.report)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(SweepReport {
        distances: cfg.sweep.distances.clone(),
        rotations_deg: cfg.sweep.rotations_deg.clone(),
        modes: MapMode::ALL.into_iter().filter(|m| cfg.wants(*m)).collect(),
        cells,
    })
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

/// `coverage.csv` as one rotations-by-distances table per mode, plus long
/// form `error.csv`, `runtime.csv` and per-cell status in `cells.csv`.
pub fn write_sweep_outputs(report: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = create(dir, "coverage.csv")?;
    let header: Vec<String> = report.distances.iter().map(|d| format!("{d:.3}")).collect();
    writeln!(f, "mode,rotation_deg,{}", header.join(","))?;
    for &mode in &report.modes {
        for (r, row) in report.rotations_deg.iter().zip(report.coverage_grid(mode)) {
            let vals: Vec<String> = row.iter().map(|v| v.map_or("NA".into(), |n| n.to_string())).collect();
            writeln!(f, "{},{r:.1},{}", mode.name(), vals.join(","))?;
        }
    }
    f.flush()?;

    let mut err = create(dir, "error.csv")?;
    writeln!(err, "mode,distance_m,rotation_deg,points,mae_m,rmse_m")?;
    let mut rt = create(dir, "runtime.csv")?;
    writeln!(rt, "distance_m,rotation_deg,stage,count,mean_s,sd_s")?;
    let mut st = create(dir, "cells.csv")?;
    writeln!(
        st,
        "distance_m,rotation_deg,status,keyframes,final_error_slam_m,final_error_dr_m,message"
    )?;
    for c in &report.cells {
        let gate = format!("{:.3},{:.1}", c.distance, c.rotation_deg);
        match &c.result {
            Ok(r) => {
                for m in &r.modes {
                    writeln!(err, "{},{gate},{},{:.6},{:.6}", m.mode.name(), m.points, m.mae, m.rmse)?;
                }
                for t in &r.timings {
                    writeln!(rt, "{gate},{},{},{:.6},{:.6}", t.stage, t.count(), t.mean(), t.sd())?;
                }
                writeln!(
                    st,
                    "{gate},ok,{},{:.6},{:.6},",
                    r.keyframes, r.final_error_slam, r.final_error_dr
                )?;
            }
            Err(msg) => writeln!(st, "{gate},failed,,,,\"{}\"", msg.replace('"', "'"))?,
        }
    }
    for w in [&mut err, &mut rt, &mut st] {
        w.flush()?;
    }
    Ok(())
}
