//! Orthogonal sonar image synthesis by ray casting.

use super::config::{Mount, NoiseParams, SonarConfig, SonarRig};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::{Point3, Pose3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use std::io::Write;
use std::path::Path;

/// Polar intensity grid, row = range bin, column = beam.
#[derive(Clone, Debug, PartialEq)]
pub struct SonarImage {
    pub intensities: Vec<f64>,
    pub config: SonarConfig,
    pub timestamp: f64,
}

impl SonarImage {
    pub fn zeros(config: SonarConfig, timestamp: f64) -> Self {
        let n = config.range_bins() * config.beam_count;
        Self {
            intensities: vec![0.0; n],
            config,
            timestamp,
        }
    }

    /// Wraps a row-major grid; the shape must match the configuration.
    pub fn from_grid(config: SonarConfig, timestamp: f64, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != config.range_bins() * config.beam_count {
            return Err(Error::InvalidParameter(format!(
                "grid has {} cells, configuration needs {}x{}",
                intensities.len(),
                config.range_bins(),
                config.beam_count
            )));
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "intensities must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            intensities,
            config,
            timestamp,
        })
    }

    pub fn rows(&self) -> usize {
        self.config.range_bins()
    }

    pub fn cols(&self) -> usize {
        self.config.beam_count
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.config.beam_count + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let c = self.config.beam_count;
        self.intensities[row * c + col] = v;
    }

    /// Intensity with zero padding outside the grid.
    #[inline]
    pub fn get_padded(&self, row: isize, col: isize) -> f64 {
        if row < 0 || col < 0 || row as usize >= self.rows() || col as usize >= self.cols() {
            0.0
        } else {
            self.get(row as usize, col as usize)
        }
    }

    pub fn max(&self) -> f64 {
        self.intensities.iter().cloned().fold(0.0, f64::max)
    }

    /// 16-bit binary PGM, row = range bin, column = beam, scaled so that
    /// `full_scale` maps to 65535.
    pub fn write_pgm(&self, out: &mut impl Write, full_scale: f64) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.cols(), self.rows())?;
        let scale = if full_scale > 0.0 { 65535.0 / full_scale } else { 0.0 };
        let mut buf = Vec::with_capacity(self.intensities.len() * 2);
        for v in &self.intensities {
            let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&q.to_be_bytes());
        }
        out.write_all(&buf)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>, full_scale: f64) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut f, full_scale)?;
        f.flush()?;
        Ok(())
    }
}

/// Ray direction in the sensor frame for a fan angle and an aperture angle.
fn ray_direction(mount: Mount, fan: f64, across: f64) -> Point3 {
    let (bearing, elevation) = match mount {
        Mount::Horizontal => (fan, across),
        Mount::Vertical => (across, fan),
    };
    let (sb, cb) = bearing.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Point3::new(ce * cb, ce * sb, se)
}

/// Noiseless image: per cell, the strongest `|cos(incidence)|` among the
/// aperture rays whose first return falls in that range bin.
pub fn render_clean(scene: &Scene, pose: &Pose3, cfg: &SonarConfig, timestamp: f64) -> SonarImage {
    let mut img = SonarImage::zeros(cfg.clone(), timestamp);
    let across = cfg.aperture_angles();
    let origin = pose.translation;
    for beam in 0..cfg.beam_count {
        let fan = cfg.beam_angle(beam);
        for &a in &across {
            let local = ray_direction(cfg.mount, fan, a);
            let dir = pose.transform_point(&local) - origin;
            if let Some(hit) = scene.raycast(&origin, &dir, cfg.max_range) {
                if let Some(bin) = cfg.range_to_bin(hit.distance) {
                    let w = hit.normal.dot(&dir).abs().min(1.0);
                    if w > img.get(bin, beam) {
                        img.set(bin, beam, w);
                    }
                }
            }
        }
    }
    img
}

/// Applies speckle and background noise in row-major order from `rng`.
pub fn apply_noise(img: &mut SonarImage, noise: &NoiseParams, rng: &mut impl Rng) {
    let speckle = (noise.speckle_shape > 0.0)
        .then(|| Gamma::new(noise.speckle_shape, 1.0 / noise.speckle_shape).expect("gamma shape"));
    let background = (noise.background_mean > 0.0).then(|| Exp::new(1.0 / noise.background_mean).expect("exp rate"));
    for v in img.intensities.iter_mut() {
        if let Some(g) = &speckle {
            if *v > 0.0 {
                *v *= g.sample(rng);
            }
        }
        if let Some(e) = &background {
            *v += e.sample(rng);
        }
    }
}

/// Renders the concurrent horizontal and vertical images seen from `pose`.
pub fn render_sonar_pair(
    scene: &Scene,
    pose: &Pose3,
    rig: &SonarRig,
    noise: &NoiseParams,
    seed: u64,
    timestamp: f64,
) -> Result<(SonarImage, SonarImage)> {
    rig.validate()?;
    let mut h = render_clean(scene, pose, &rig.horizontal, timestamp);
    let mut v = render_clean(scene, pose, &rig.vertical, timestamp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply_noise(&mut h, noise, &mut rng);
    apply_noise(&mut v, noise, &mut rng);
    Ok((h, v))
}
