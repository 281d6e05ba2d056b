//! Object instancing and pluggable semantic labels.

use super::cfar::{cell_polar, DetectionMask};
use super::dbscan::dbscan;
use crate::simworld::{oracle_label, GroundTruthLabel, Scene, SonarImage};
use crate::{PointCloud, Pose3, BODY_FRAME, WORLD_FRAME};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Class(String),
    Unknown,
}

impl ClassLabel {
    pub fn class(&self) -> Option<&str> {
        match self {
            ClassLabel::Class(c) => Some(c),
            ClassLabel::Unknown => None,
        }
    }

    pub fn is_known(&self) -> bool {
        matches!(self, ClassLabel::Class(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    /// Neighborhood radius in the Cartesian image plane, meters.
    pub eps: f64,
    pub min_pts: usize,
    pub min_cluster_size: usize,
    /// Labels below this confidence become unknown.
    pub confidence_threshold: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            eps: 0.25,
            min_pts: 3,
            min_cluster_size: 5,
            confidence_threshold: 0.5,
        }
    }
}

/// A cluster of detected cells from one horizontal image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    /// Member (range_bin, beam) cells, unique and sorted.
    pub cells: Vec<(usize, usize)>,
    pub label: ClassLabel,
    pub confidence: f64,
}

impl ObjectInstance {
    /// Body-frame planar points of the member cells (elevation zero).
    pub fn planar_cloud(&self, img: &SonarImage) -> PointCloud {
        let mut cloud = PointCloud::new(BODY_FRAME);
        for &(r, c) in &self.cells {
            let p = cell_polar(img, r, c);
            cloud.push(p.to_cartesian(), p.intensity);
        }
        cloud
    }

    /// Intensity crop over the bounding box of the member cells.
    pub fn patch(&self, img: &SonarImage) -> IntensityPatch {
        let r0 = self.cells.iter().map(|c| c.0).min().unwrap_or(0);
        let r1 = self.cells.iter().map(|c| c.0).max().unwrap_or(0);
        let c0 = self.cells.iter().map(|c| c.1).min().unwrap_or(0);
        let c1 = self.cells.iter().map(|c| c.1).max().unwrap_or(0);
        let (rows, cols) = (r1 - r0 + 1, c1 - c0 + 1);
        let mut values = Vec::with_capacity(rows * cols);
        for r in r0..=r1 {
            for c in c0..=c1 {
                values.push(img.get(r, c));
            }
        }
        IntensityPatch { rows, cols, values }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityPatch {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// What a classifier sees: the cropped patch, the cluster's planar
/// geometry, and the capture pose (only simulation oracles may use it).
pub struct ClassifierInput<'a> {
    pub patch: &'a IntensityPatch,
    pub cloud: &'a PointCloud,
    pub capture_pose: &'a Pose3,
}

pub trait Classifier {
    fn classify(&self, input: &ClassifierInput<'_>) -> (ClassLabel, f64);
}

/// Simulator stand-in: nearest primitive to the cluster centroid. Classes
/// missing from `known_classes` come back unknown, the way a network only
/// recognises what it was trained on.
pub struct OracleClassifier<'a> {
    pub scene: &'a Scene,
    pub gate: f64,
    pub known_classes: Vec<String>,
}

impl Classifier for OracleClassifier<'_> {
    fn classify(&self, input: &ClassifierInput<'_>) -> (ClassLabel, f64) {
        let world = crate::geometry::transform_cloud(input.capture_pose, input.cloud, WORLD_FRAME);
        match oracle_label(self.scene, &world, self.gate) {
            GroundTruthLabel::Known { class, .. } if self.known_classes.contains(&class) => {
                (ClassLabel::Class(class), 1.0)
            }
            _ => (ClassLabel::Unknown, 0.0),
        }
    }
}

/// Extent rules over the principal axes of the planar cluster.
///
/// * piling: major extent ≤ 0.9 m and minor extent ≤ 0.6 m, confidence 0.9
/// * seawall: major extent ≥ 5 m and minor/major ≤ 0.2, confidence 0.8
#[derive(Clone, Debug, Default)]
pub struct HeuristicClassifier;

pub const PILING_MAX_MAJOR: f64 = 0.9;
pub const PILING_MAX_MINOR: f64 = 0.6;
pub const SEAWALL_MIN_MAJOR: f64 = 5.0;
pub const SEAWALL_MAX_ASPECT: f64 = 0.2;

/// Full extents of a planar cloud along its principal axes, major first.
pub fn principal_extents(cloud: &PointCloud) -> (f64, f64) {
    let n = cloud.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mx, my) = cloud
        .points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x / n as f64, b + p.y / n as f64));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &cloud.points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = angle.sin_cos();
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in &cloud.points {
        let (dx, dy) = (p.x - mx, p.y - my);
        let u = [c * dx + s * dy, -s * dx + c * dy];
        for k in 0..2 {
            lo[k] = lo[k].min(u[k]);
            hi[k] = hi[k].max(u[k]);
        }
    }
    let (a, b) = (hi[0] - lo[0], hi[1] - lo[1]);
    (a.max(b), a.min(b))
}

impl Classifier for HeuristicClassifier {
    fn classify(&self, input: &ClassifierInput<'_>) -> (ClassLabel, f64) {
        let (major, minor) = principal_extents(input.cloud);
        if major <= PILING_MAX_MAJOR && minor <= PILING_MAX_MINOR {
            (ClassLabel::Class("piling".into()), 0.9)
        } else if major >= SEAWALL_MIN_MAJOR && minor <= SEAWALL_MAX_ASPECT * major {
            (ClassLabel::Class("seawall".into()), 0.8)
        } else {
            (ClassLabel::Unknown, 0.0)
        }
    }
}

/// Clusters detections of a horizontal image into unlabeled instances.
/// Clusters smaller than `min_cluster_size` are dropped.
pub fn extract_instances(mask: &DetectionMask, img: &SonarImage, p: &InstanceParams) -> Vec<ObjectInstance> {
    let pts: Vec<[f64; 2]> = mask
        .cells()
        .iter()
        .map(|&(r, c)| {
            let q = cell_polar(img, r, c).to_cartesian();
            [q.x, q.y]
        })
        .collect();
    let clustering = dbscan(&pts, p.eps, p.min_pts);
    clustering
        .clusters
        .iter()
        .filter(|m| m.len() >= p.min_cluster_size)
        .map(|m| {
            let mut cells: Vec<(usize, usize)> = m.iter().map(|&i| mask.cells()[i]).collect();
            cells.sort_unstable();
            ObjectInstance {
                cells,
                label: ClassLabel::Unknown,
                confidence: 0.0,
            }
        })
        .collect()
}

/// Runs the classifier and applies the confidence threshold.
pub fn classify(
    instance: &ObjectInstance,
    img: &SonarImage,
    capture_pose: &Pose3,
    classifier: &dyn Classifier,
    confidence_threshold: f64,
) -> (ClassLabel, f64) {
    let patch = instance.patch(img);
    let cloud = instance.planar_cloud(img);
    let (label, conf) = classifier.classify(&ClassifierInput {
        patch: &patch,
        cloud: &cloud,
        capture_pose,
    });
    if conf < confidence_threshold {
        (ClassLabel::Unknown, conf)
    } else {
        (label, conf)
    }
}
