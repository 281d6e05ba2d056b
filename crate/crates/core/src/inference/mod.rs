//! Per-class height models learned from fused points and used to lift
//! horizontal-only detections into 3D.
//!
//! Each class keeps a reference frame fixed at its first sighting: the body
//! frame of that sighting with a polar origin at (minimum range, median
//! bearing). Later sightings are registered into it with ICP; every grid
//! cell over (range, bearing) offsets holds a discrete posterior over
//! vehicle-relative height.

use crate::detect::{cell_polar, ObjectInstance};
use crate::error::{Error, Result};
use crate::fusion::FusedPoint;
use crate::geometry::voxel_downsample;
use crate::simworld::SonarImage;
use crate::slam::{icp_2d, IcpParams};
use crate::{Point3, PointCloud, PolarPoint, Pose2, BODY_FRAME};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceParams {
    /// Range cell size, meters.
    pub r_bin: f64,
    /// Bearing cell size, radians.
    pub theta_bin: f64,
    /// Height bin size, meters.
    pub z_bin: f64,
    /// Half span of the height axis, meters.
    pub z_extent: f64,
    pub likelihood_sigma: f64,
    /// Minimum posterior mass of a MAP bin; `None` means 3 / num_bins.
    pub confidence_thresh: Option<f64>,
    /// Grid half extents around the origin, meters and radians.
    pub r_extent: f64,
    pub theta_extent: f64,
    pub icp: IcpParams,
    /// Voxel size capping reference cloud growth, meters.
    pub reference_voxel: f64,
    /// Largest |elevation| a prediction may take, radians.
    pub max_elevation: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self::for_sonar(&crate::simworld::SonarConfig::default_horizontal())
    }
}

impl InferenceParams {
    /// Defaults scaled to a horizontal sonar.
    pub fn for_sonar(cfg: &crate::simworld::SonarConfig) -> Self {
        let half = 0.5 * cfg.vertical_aperture;
        Self {
            r_bin: 2.0 * cfg.range_resolution,
            theta_bin: 2.0 * cfg.beam_spacing(),
            z_bin: 0.1,
            z_extent: cfg.max_range * half.sin(),
            likelihood_sigma: 0.15,
            confidence_thresh: None,
            r_extent: 3.0,
            theta_extent: 0.5,
            icp: IcpParams {
                max_correspondence: 0.5,
                ..IcpParams::default()
            },
            reference_voxel: cfg.range_resolution,
            max_elevation: half,
        }
    }

    pub fn num_z_bins(&self) -> usize {
        2 * (self.z_extent / self.z_bin).ceil() as usize
    }

    pub fn z_min(&self) -> f64 {
        -(self.num_z_bins() as f64 / 2.0) * self.z_bin
    }

    pub fn z_center(&self, k: usize) -> f64 {
        self.z_min() + (k as f64 + 0.5) * self.z_bin
    }

    pub fn threshold(&self) -> f64 {
        self.confidence_thresh.unwrap_or(3.0 / self.num_z_bins() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// Minimum range and median bearing of the first sighting.
    pub origin: (f64, f64),
    /// Planar points in the first sighting's body frame.
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub posterior: Vec<f64>,
    pub updates: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometryModel {
    pub class: String,
    pub params: InferenceParams,
    pub reference: Option<Reference>,
    /// Touched cells only; every other cell is implicitly uniform.
    #[serde(with = "cell_list")]
    pub cells: BTreeMap<(i64, i64), Cell>,
    pub skipped_out_of_grid: usize,
}

/// Serializes the cell map as a list so that text formats with string keys
/// can hold it.
mod cell_list {
    use super::Cell;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        r: i64,
        theta: i64,
        #[serde(flatten)]
        cell: Cell,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(i64, i64), Cell>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(&(r, theta), c)| Entry {
                r,
                theta,
                cell: c.clone(),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(i64, i64), Cell>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?
            .into_iter()
            .map(|e| ((e.r, e.theta), e.cell))
            .collect())
    }
}

/// Minimum range and median bearing (mean of the middle pair for even counts).
pub fn polar_origin(cloud: &PointCloud) -> (f64, f64) {
    let mut bearings: Vec<f64> = cloud.points.iter().map(|p| p.y.atan2(p.x)).collect();
    bearings.sort_by(f64::total_cmp);
    let n = bearings.len();
    let median = if n % 2 == 1 {
        bearings[n / 2]
    } else {
        0.5 * (bearings[n / 2 - 1] + bearings[n / 2])
    };
    let rmin = cloud
        .points
        .iter()
        .map(|p| p.x.hypot(p.y))
        .fold(f64::INFINITY, f64::min);
    (rmin, median)
}

fn planar_xy(p: &Point3, t: &Pose2) -> (f64, f64) {
    t.transform_xy(p.x, p.y)
}

impl ClassGeometryModel {
    pub fn new(class: impl Into<String>, params: InferenceParams) -> Self {
        Self {
            class: class.into(),
            params,
            reference: None,
            cells: BTreeMap::new(),
            skipped_out_of_grid: 0,
        }
    }

    pub fn uniform(&self) -> Vec<f64> {
        let n = self.params.num_z_bins();
        vec![1.0 / n as f64; n]
    }

    /// Posterior of the cell, uniform when never updated.
    pub fn posterior(&self, key: (i64, i64)) -> Vec<f64> {
        self.cells
            .get(&key)
            .map_or_else(|| self.uniform(), |c| c.posterior.clone())
    }

    pub fn init_reference(&mut self, first_sighting: &PointCloud) -> Result<()> {
        if self.reference.is_some() {
            return Err(Error::ReferenceAlreadySet(self.class.clone()));
        }
        if first_sighting.is_empty() {
            return Err(Error::InvalidParameter("first sighting is empty".into()));
        }
        let planar = PointCloud::from_points(
            BODY_FRAME,
            first_sighting
                .points
                .iter()
                .map(|p| Point3::new(p.x, p.y, 0.0))
                .collect(),
        );
        self.reference = Some(Reference {
            origin: polar_origin(first_sighting),
            cloud: planar,
        });
        self.cells.clear();
        Ok(())
    }

    /// Grid cell of a point in the reference frame, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Result<Option<(i64, i64)>> {
        let r = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::ReferenceMissing(self.class.clone()))?;
        let p = &self.params;
        let dr = x.hypot(y) - r.origin.0;
        let dt = crate::scalar::wrap_angle(y.atan2(x) - r.origin.1);
        if dr.abs() > p.r_extent || dt.abs() > p.theta_extent {
            return Ok(None);
        }
        Ok(Some(((dr / p.r_bin).floor() as i64, (dt / p.theta_bin).floor() as i64)))
    }

    /// Transform from the sighting's body frame into the reference frame:
    /// ICP seeded by lining up the two polar origins. `None` on ICP failure.
    pub fn register_to_reference(&self, object_points: &PointCloud) -> Result<Option<Pose2>> {
        let r = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::ReferenceMissing(self.class.clone()))?;
        if object_points.is_empty() {
            return Ok(None);
        }
        let (r0, t0) = r.origin;
        let (r1, t1) = polar_origin(object_points);
        let guess = Pose2::new(0.0, 0.0, t0)
            .compose(&Pose2::new(r0 - r1, 0.0, 0.0))
            .compose(&Pose2::new(0.0, 0.0, -t1));
        let res = icp_2d(object_points, &r.cloud, guess, &self.params.icp);
        Ok(res.ok().then_some(res.pose))
    }

    /// Adds registered planar points to the reference cloud, thinned.
    pub fn grow_reference(&mut self, points: &PointCloud, t: &Pose2) -> Result<()> {
        let voxel = self.params.reference_voxel;
        let r = self
            .reference
            .as_mut()
            .ok_or_else(|| Error::ReferenceMissing(self.class.clone()))?;
        for p in &points.points {
            let (x, y) = planar_xy(p, t);
            r.cloud.points.push(Point3::new(x, y, 0.0));
        }
        r.cloud = voxel_downsample(&r.cloud, voxel);
        Ok(())
    }

    /// Bayes update with points already in the reference frame (x, y) and
    /// measured height z. Returns how many were applied.
    pub fn bayes_update(&mut self, points: &[Point3]) -> Result<usize> {
        let mut applied = 0;
        let two_s2 = 2.0 * self.params.likelihood_sigma.powi(2);
        let centers: Vec<f64> = (0..self.params.num_z_bins()).map(|k| self.params.z_center(k)).collect();
        for p in points {
            let Some(key) = self.cell_of(p.x, p.y)? else {
                self.skipped_out_of_grid += 1;
                continue;
            };
            let uniform = self.uniform();
            let cell = self.cells.entry(key).or_insert_with(|| Cell {
                posterior: uniform,
                updates: 0,
            });
            let logs: Vec<f64> = cell
                .posterior
                .iter()
                .zip(&centers)
                .map(|(&prior, &z)| prior.ln() - (z - p.z).powi(2) / two_s2)
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = unnorm.iter().sum();
            cell.posterior = unnorm.into_iter().map(|v| v / total).collect();
            cell.updates += 1;
            applied += 1;
        }
        Ok(applied)
    }

    /// Two-sided MAP heights for a reference-frame point: the best bin with
    /// z <= 0 and the best with z > 0, each kept if its mass reaches the
    /// threshold. Never-updated cells give nothing.
    pub fn map_heights(&self, x: f64, y: f64, threshold: f64) -> Result<Vec<f64>> {
        let Some(key) = self.cell_of(x, y)? else {
            return Ok(Vec::new());
        };
        let Some(cell) = self.cells.get(&key) else {
            return Ok(Vec::new());
        };
        let half = self.params.num_z_bins() / 2;
        let mut out = Vec::new();
        for range in [0..half, half..self.params.num_z_bins()] {
            let best = range
                .map(|k| (k, cell.posterior[k]))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((k, mass)) = best {
                if mass >= threshold {
                    out.push(self.params.z_center(k));
                }
            }
        }
        Ok(out)
    }

    /// Global MAP height of a cell, ignoring the threshold.
    pub fn map_height(&self, x: f64, y: f64) -> Result<Option<f64>> {
        let Some(key) = self.cell_of(x, y)? else {
            return Ok(None);
        };
        Ok(self.cells.get(&key).map(|c| {
            let k = (0..c.posterior.len())
                .max_by(|&a, &b| c.posterior[a].total_cmp(&c.posterior[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            self.params.z_center(k)
        }))
    }

    /// Predicted 3D points (sighting body frame) for polar detections,
    /// given the sighting-to-reference transform.
    pub fn map_predict(&self, detections: &[PolarPoint], t: &Pose2) -> Result<Vec<PolarPoint>> {
        let thresh = self.params.threshold();
        let mut out = Vec::new();
        for d in detections {
            let flat = d.to_cartesian();
            let (x, y) = planar_xy(&Point3::new(flat.x, flat.y, 0.0), t);
            for z in self.map_heights(x, y, thresh)? {
                if d.range <= 0.0 || z.abs() > d.range {
                    continue;
                }
                let phi = (z / d.range).asin();
                if phi.abs() <= self.params.max_elevation {
                    out.push(PolarPoint::new(d.range, d.bearing, phi, d.intensity));
                }
            }
        }
        Ok(out)
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Models for every class seen so far, keyed by class name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelBank {
    pub models: BTreeMap<String, ClassGeometryModel>,
}

impl ModelBank {
    pub fn write_json(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, self).map_err(|e| Error::Parse {
            what: "model dump".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceStats {
    pub instances_used: usize,
    pub registration_failures: usize,
    pub updates: usize,
    pub predicted: usize,
}

/// Augments one frame's fused points with height predictions for labeled
/// instances.
///
/// For every labeled instance, its fused points update the class model and
/// its detections outside the dual-coverage bearing band receive MAP
/// heights. Unknown instances contribute nothing beyond their fused points.
/// The result is `fused` followed by the predictions, in the body frame.
pub fn infer_frame(
    h_img: &SonarImage,
    instances: &[ObjectInstance],
    fused: &[FusedPoint],
    overlap_bearing: f64,
    bank: &mut ModelBank,
    params: &InferenceParams,
) -> Result<(PointCloud, InferenceStats)> {
    let mut cloud = crate::fusion::fused_cloud(fused);
    let mut stats = InferenceStats::default();
    for inst in instances {
        let Some(class) = inst.label.class() else { continue };
        let members: HashSet<(usize, usize)> = inst.cells.iter().copied().collect();
        let planar = inst.planar_cloud(h_img);
        let measured: Vec<Point3> = fused
            .iter()
            .filter(|f| members.contains(&f.h_cell))
            .map(|f| f.polar().to_cartesian())
            .collect();
        let model = bank
            .models
            .entry(class.to_string())
            .or_insert_with(|| ClassGeometryModel::new(class, params.clone()));
        let t = if model.reference.is_none() {
            model.init_reference(&planar)?;
            Pose2::identity()
        } else {
            match model.register_to_reference(&planar)? {
                Some(t) => {
                    model.grow_reference(&planar, &t)?;
                    t
                }
                None => {
                    stats.registration_failures += 1;
                    continue;
                }
            }
        };
        stats.instances_used += 1;
        let registered: Vec<Point3> = measured
            .iter()
            .map(|p| {
                let (x, y) = planar_xy(p, &t);
                Point3::new(x, y, p.z)
            })
            .collect();
        stats.updates += model.bayes_update(&registered)?;
        let outside: Vec<PolarPoint> = inst
            .cells
            .iter()
            .map(|&(r, c)| cell_polar(h_img, r, c))
            .filter(|p| p.bearing.abs() > overlap_bearing)
            .collect();
        for p in model.map_predict(&outside, &t)? {
            cloud.push(p.to_cartesian(), p.intensity);
            stats.predicted += 1;
        }
    }
    Ok((cloud, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sighting(points: &[(f64, f64)]) -> PointCloud {
        PointCloud::from_points(
            BODY_FRAME,
            points
                .iter()
                .map(|&(r, b)| Point3::new(r * b.cos(), r * b.sin(), 0.0))
                .collect(),
        )
    }

    fn ready_model() -> ClassGeometryModel {
        let mut m = ClassGeometryModel::new("piling", InferenceParams::default());
        m.init_reference(&sighting(&[(9.8, -0.1), (10.0, 0.0), (10.4, 0.2)]))
            .unwrap();
        m
    }

    #[test]
    fn reference_origin_and_uniform_cells() {
        let mut m = ready_model();
        let r = m.reference.as_ref().unwrap();
        assert!((r.origin.0 - 9.8).abs() < 1e-12 && r.origin.1.abs() < 1e-12);
        let u = m.posterior((0, 0));
        let n = m.params.num_z_bins() as f64;
        assert!(u.iter().all(|&v| (v - 1.0 / n).abs() < 1e-15));
        assert!(matches!(
            m.init_reference(&sighting(&[(1.0, 0.0)])),
            Err(Error::ReferenceAlreadySet(_))
        ));
    }

    #[test]
    fn bins_are_symmetric_about_zero() {
        let p = InferenceParams::default();
        let n = p.num_z_bins();
        assert_eq!(n % 2, 0);
        assert!((p.z_center(n / 2 - 1) + p.z_center(n / 2)).abs() < 1e-12);
        assert!(p.z_min() <= -p.z_extent);
    }

    #[test]
    fn single_measurement_peaks_at_its_bin() {
        let mut m = ready_model();
        let at = Point3::new(10.0, 0.0, -1.0);
        m.bayes_update(&[at]).unwrap();
        let z = m.map_height(at.x, at.y).unwrap().unwrap();
        assert!((z - -1.0).abs() <= 0.5 * m.params.z_bin + 1e-12, "{z}");
    }

    #[test]
    fn repeated_measurements_sharpen() {
        let mut m = ready_model();
        let at = Point3::new(10.0, 0.0, 0.7);
        let key = m.cell_of(at.x, at.y).unwrap().unwrap();
        let mut h = entropy(&m.posterior(key));
        for _ in 0..10 {
            m.bayes_update(&[at]).unwrap();
            let post = m.posterior(key);
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let h2 = entropy(&post);
            assert!(h2 <= h + 1e-12);
            h = h2;
        }
    }

    #[test]
    fn noisy_measurements_converge() {
        let truth = -0.8;
        for seed in 0..20 {
            let mut m = ready_model();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.2).unwrap();
            let pts: Vec<Point3> = (0..100)
                .map(|_| Point3::new(10.0, 0.0, truth + noise.sample(&mut rng)))
                .collect();
            m.bayes_update(&pts).unwrap();
            let z = m.map_height(10.0, 0.0).unwrap().unwrap();
            assert!((z - truth).abs() <= m.params.z_bin, "seed {seed}: {z}");
        }
    }

    #[test]
    fn bimodal_cell_yields_two_points() {
        // Gaussian updates multiply into one mode, so build the two-peaked
        // posterior directly.
        let mut m = ready_model();
        let key = m.cell_of(10.0, 0.0).unwrap().unwrap();
        let n = m.params.num_z_bins();
        let mut post = vec![0.1 / (n - 2) as f64; n];
        post[n / 2 - 10] = 0.5;
        post[n / 2 + 15] = 0.4;
        m.cells.insert(
            key,
            Cell {
                posterior: post,
                updates: 1,
            },
        );
        let hs = m.map_heights(10.0, 0.0, m.params.threshold()).unwrap();
        assert_eq!(hs.len(), 2);
        assert!(hs[0] < 0.0 && hs[1] > 0.0);
        let pred = m
            .map_predict(&[PolarPoint::new(10.0, 0.0, 0.0, 1.0)], &Pose2::identity())
            .unwrap();
        assert_eq!(pred.len(), 2);
    }

    #[test]
    fn untouched_cells_predict_nothing() {
        let m = ready_model();
        assert!(m.map_heights(10.0, 0.0, m.params.threshold()).unwrap().is_empty());
        let fresh = ClassGeometryModel::new("x", InferenceParams::default());
        assert!(matches!(fresh.cell_of(1.0, 0.0), Err(Error::ReferenceMissing(_))));
    }

    #[test]
    fn out_of_grid_points_are_counted() {
        let mut m = ready_model();
        assert_eq!(m.bayes_update(&[Point3::new(25.0, 0.0, 0.0)]).unwrap(), 0);
        assert_eq!(m.skipped_out_of_grid, 1);
    }

    fn ring(cx: f64, cy: f64) -> PointCloud {
        // Front half of a 0.3 m radius post seen from the origin.
        let base = cy.atan2(cx) + std::f64::consts::PI;
        let pts = (0..15)
            .map(|k| {
                let a = base - 1.2 + 2.4 * k as f64 / 14.0;
                Point3::new(cx + 0.3 * a.cos(), cy + 0.3 * a.sin(), 0.0)
            })
            .collect();
        PointCloud::from_points(BODY_FRAME, pts)
    }

    #[test]
    fn registration_of_identical_and_shifted_sightings() {
        let mut m = ClassGeometryModel::new("piling", InferenceParams::default());
        let r = ring(8.0, 0.5);
        m.init_reference(&r).unwrap();
        let t = m.register_to_reference(&r).unwrap().unwrap();
        assert!(t.x.abs() < 1e-6 && t.y.abs() < 1e-6 && t.yaw.abs() < 1e-6);
        let shifted = PointCloud::from_points(
            BODY_FRAME,
            r.points.iter().map(|p| Point3::new(p.x + 0.5, p.y, 0.0)).collect(),
        );
        let t = m.register_to_reference(&shifted).unwrap().unwrap();
        let (x, y) = t.transform_xy(shifted.points[3].x, shifted.points[3].y);
        assert!((x - r.points[3].x).abs() < 1e-2 && (y - r.points[3].y).abs() < 1e-2);
    }

    #[test]
    fn other_instance_registers_by_its_origin() {
        let mut m = ClassGeometryModel::new("piling", InferenceParams::default());
        m.init_reference(&ring(8.0, 0.5)).unwrap();
        let other = ring(12.0, -3.0);
        let t = m.register_to_reference(&other).unwrap().unwrap();
        // Registered points sit on the reference ring.
        let reference = ring(8.0, 0.5);
        for p in &other.points {
            let (x, y) = t.transform_xy(p.x, p.y);
            let d = reference
                .points
                .iter()
                .map(|q| (q.x - x).hypot(q.y - y))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 0.05, "{d}");
        }
    }

    #[test]
    fn no_labeled_instances_returns_fused_cloud() {
        let img = SonarImage::zeros(crate::simworld::SonarConfig::default_horizontal(), 0.0);
        let fp = FusedPoint {
            range: 10.0,
            bearing: 0.0,
            elevation: 0.1,
            confidence: 0.5,
            singleton: false,
            intensity: 1.0,
            h_cell: (200, 128),
            v_cell: (200, 140),
        };
        let inst = ObjectInstance {
            cells: vec![(200, 128)],
            label: crate::detect::ClassLabel::Unknown,
            confidence: 0.0,
        };
        let mut bank = ModelBank::default();
        let (cloud, stats) = infer_frame(&img, &[inst], &[fp], 0.17, &mut bank, &InferenceParams::default()).unwrap();
        assert_eq!(cloud, crate::fusion::fused_cloud(&[fp]));
        assert_eq!(stats.predicted, 0);
        assert!(bank.models.is_empty());
    }

    #[test]
    fn model_dump_is_json() {
        let mut m = ready_model();
        m.bayes_update(&[Point3::new(10.0, 0.0, 0.3)]).unwrap();
        let mut bank = ModelBank::default();
        bank.models.insert("piling".into(), m);
        let mut buf = Vec::new();
        bank.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let cells = v["models"]["piling"]["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 1);
        let back: ModelBank = serde_json::from_slice(&buf).unwrap();
        let keys = |b: &ModelBank| b.models["piling"].cells.keys().copied().collect::<Vec<_>>();
        assert_eq!(keys(&back), keys(&bank));
    }
}
