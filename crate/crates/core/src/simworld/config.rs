use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mount {
    /// Beam fan sweeps bearing; elevation is integrated over the aperture.
    Horizontal,
    /// Beam fan sweeps elevation; bearing is integrated over the aperture.
    Vertical,
}

/// Imaging sonar geometry.
///
/// `horizontal_fov` and `vertical_aperture` are expressed in the sonar's
/// own frame: the span of the beam fan and the span integrated by each beam.
/// A vertically mounted sonar therefore images elevation across its
/// `horizontal_fov` and integrates bearing across its `vertical_aperture`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SonarConfig {
    pub max_range: f64,
    pub range_resolution: f64,
    pub horizontal_fov: f64,
    pub vertical_aperture: f64,
    pub beam_count: usize,
    pub elevation_samples: usize,
    pub mount: Mount,
    pub rate: f64,
}

impl SonarConfig {
    pub fn default_horizontal() -> Self {
        Self {
            max_range: 30.0,
            range_resolution: 0.05,
            horizontal_fov: 130f64.to_radians(),
            vertical_aperture: 20f64.to_radians(),
            beam_count: 257,
            elevation_samples: 41,
            mount: Mount::Horizontal,
            rate: 5.0,
        }
    }

    pub fn default_vertical() -> Self {
        Self {
            mount: Mount::Vertical,
            ..Self::default_horizontal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSonarConfig(m.to_string()));
        let pi = std::f64::consts::PI;
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive");
        }
        if !(self.range_resolution > 0.0) {
            return bad("range_resolution must be positive");
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov <= pi) {
            return bad("horizontal_fov must lie in (0, pi]");
        }
        if !(self.vertical_aperture > 0.0 && self.vertical_aperture <= pi) {
            return bad("vertical_aperture must lie in (0, pi]");
        }
        if self.beam_count < 2 {
            return bad("beam_count must be at least 2");
        }
        if self.elevation_samples == 0 {
            return bad("elevation_samples must be positive");
        }
        if !(self.rate > 0.0) {
            return bad("rate must be positive");
        }
        Ok(())
    }

    pub fn range_bins(&self) -> usize {
        (self.max_range / self.range_resolution - 1e-9).ceil() as usize
    }

    /// Range at the center of bin `r`; bin `r` collects returns that round to it.
    pub fn bin_range(&self, r: usize) -> f64 {
        r as f64 * self.range_resolution
    }

    pub fn range_to_bin(&self, range: f64) -> Option<usize> {
        let b = (range / self.range_resolution).round();
        (b >= 0.0 && (b as usize) < self.range_bins()).then_some(b as usize)
    }

    pub fn beam_spacing(&self) -> f64 {
        self.horizontal_fov / (self.beam_count - 1) as f64
    }

    /// Fan angle of beam `b`; beams span the field of view inclusively.
    pub fn beam_angle(&self, b: usize) -> f64 {
        -0.5 * self.horizontal_fov + b as f64 * self.beam_spacing()
    }

    pub fn angle_to_beam(&self, angle: f64) -> Option<usize> {
        let b = ((angle + 0.5 * self.horizontal_fov) / self.beam_spacing()).round();
        (b >= 0.0 && (b as usize) < self.beam_count).then_some(b as usize)
    }

    /// Angles of the rays cast across the aperture, symmetric about zero.
    pub fn aperture_angles(&self) -> Vec<f64> {
        let n = self.elevation_samples;
        if n == 1 {
            return vec![0.0];
        }
        let step = self.vertical_aperture / (n - 1) as f64;
        (0..n)
            .map(|i| -0.5 * self.vertical_aperture + i as f64 * step)
            .collect()
    }
}

/// A horizontal and a vertical sonar sharing one origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SonarRig {
    pub horizontal: SonarConfig,
    pub vertical: SonarConfig,
    /// Minimum overlap, both bearing and elevation, radians.
    pub min_overlap: f64,
}

impl Default for SonarRig {
    fn default() -> Self {
        Self {
            horizontal: SonarConfig::default_horizontal(),
            vertical: SonarConfig::default_vertical(),
            min_overlap: 20f64.to_radians(),
        }
    }
}

impl SonarRig {
    /// Half extents `(bearing, elevation)` of the dual-coverage frustum.
    pub fn overlap_half_angles(&self) -> (f64, f64) {
        let bearing = self.horizontal.horizontal_fov.min(self.vertical.vertical_aperture);
        let elevation = self.horizontal.vertical_aperture.min(self.vertical.horizontal_fov);
        (0.5 * bearing, 0.5 * elevation)
    }

    pub fn validate(&self) -> Result<()> {
        self.horizontal.validate()?;
        self.vertical.validate()?;
        if self.horizontal.mount != Mount::Horizontal || self.vertical.mount != Mount::Vertical {
            return Err(Error::InvalidSonarConfig(
                "rig needs one horizontal and one vertical sonar".into(),
            ));
        }
        if (self.horizontal.range_resolution - self.vertical.range_resolution).abs() > 1e-12 {
            return Err(Error::InvalidSonarConfig(
                "both sonars must share a range resolution".into(),
            ));
        }
        let (b, e) = self.overlap_half_angles();
        let tol = 1e-9;
        if 2.0 * b + tol < self.min_overlap || 2.0 * e + tol < self.min_overlap {
            return Err(Error::InsufficientOverlap {
                bearing_deg: (2.0 * b).to_degrees(),
                elevation_deg: (2.0 * e).to_degrees(),
                required_deg: self.min_overlap.to_degrees(),
            });
        }
        Ok(())
    }
}

/// Sonar image noise: multiplicative gamma speckle on returns and additive
/// exponential background on every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Mean of the exponential background; zero disables it.
    pub background_mean: f64,
    /// Gamma shape of the unit-mean speckle; zero disables it.
    pub speckle_shape: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            background_mean: 0.02,
            speckle_shape: 4.0,
        }
    }
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self {
            background_mean: 0.0,
            speckle_shape: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let h = SonarConfig::default_horizontal();
        assert_eq!(h.range_bins(), 600);
        assert_eq!(h.range_to_bin(10.0), Some(200));
        assert!((h.beam_angle(128)).abs() < 1e-12);
        assert_eq!(h.angle_to_beam(0.0), Some(128));
        assert_eq!(h.angle_to_beam(2.0), None);
        assert!(SonarRig::default().validate().is_ok());
    }

    #[test]
    fn narrow_overlap_rejected() {
        let mut rig = SonarRig::default();
        rig.vertical.vertical_aperture = 12f64.to_radians();
        assert!(matches!(rig.validate(), Err(Error::InsufficientOverlap { .. })));
        rig.min_overlap = 10f64.to_radians();
        assert!(rig.validate().is_ok());
    }

    #[test]
    fn invalid_fields() {
        let mut c = SonarConfig::default_horizontal();
        c.beam_count = 1;
        assert!(c.validate().is_err());
        let mut c = SonarConfig::default_horizontal();
        c.range_resolution = 0.0;
        assert!(c.validate().is_err());
    }
}
