//! Primitive scenes: ray intersection, exact surface distance, and the
//! ground-truth labelling oracle.

use crate::error::{Error, Result};
use crate::{Point3, PointCloud, Pose2};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

const RAY_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    /// Finite capped cylinder. `axis` need not be normalized.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        height: f64,
        #[serde(default = "vertical_axis")]
        axis: [f64; 3],
    },
    /// Box with full side lengths `extents`, rotated by `yaw` about +z.
    Box {
        center: [f64; 3],
        extents: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
}

fn vertical_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub class: String,
    pub instance: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub normal: Point3,
    pub primitive: usize,
}

/// Orthonormal frame of a cylinder: `(u, v, axis)`.
fn cylinder_basis(axis: [f64; 3]) -> (Point3, Point3, Point3) {
    let a = Point3::from_array(axis);
    let a = a.scale(1.0 / a.norm());
    let helper = if a.z.abs() < 0.9 {
        Point3::new(0.0, 0.0, 1.0)
    } else {
        Point3::new(1.0, 0.0, 0.0)
    };
    let u = helper.cross(&a);
    let u = u.scale(1.0 / u.norm());
    let v = a.cross(&u);
    (u, v, a)
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let ok = match &self.shape {
            Shape::Cylinder {
                radius,
                height,
                axis,
                center,
            } => {
                *radius > 0.0
                    && *height > 0.0
                    && Point3::from_array(*axis).norm() > 1e-12
                    && center.iter().all(|c| c.is_finite())
            }
            Shape::Box {
                extents, center, yaw, ..
            } => extents.iter().all(|&e| e > 0.0) && center.iter().all(|c| c.is_finite()) && yaw.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!(
                "primitive {} has non-positive or non-finite dimensions",
                self.instance
            )))
        }
    }

    /// Distance along a unit ray to the first surface crossing beyond the origin.
    pub fn intersect(&self, origin: &Point3, dir: &Point3) -> Option<(f64, Point3)> {
        match &self.shape {
            Shape::Cylinder {
                center,
                radius,
                height,
                axis,
            } => {
                let (u, v, a) = cylinder_basis(*axis);
                let rel = *origin - Point3::from_array(*center);
                let o = Point3::new(rel.dot(&u), rel.dot(&v), rel.dot(&a));
                let d = Point3::new(dir.dot(&u), dir.dot(&v), dir.dot(&a));
                let half = 0.5 * height;
                let mut best: Option<(f64, Point3)> = None;
                let mut consider = |t: f64, n_local: Point3| {
                    if t > RAY_EPS && best.is_none_or(|(bt, _)| t < bt) {
                        let n = u.scale(n_local.x) + v.scale(n_local.y) + a.scale(n_local.z);
                        best = Some((t, n));
                    }
                };
                let qa = d.x * d.x + d.y * d.y;
                if qa > 1e-15 {
                    let qb = 2.0 * (o.x * d.x + o.y * d.y);
                    let qc = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                            let z = o.z + t * d.z;
                            if z.abs() <= half {
                                let px = o.x + t * d.x;
                                let py = o.y + t * d.y;
                                consider(t, Point3::new(px / radius, py / radius, 0.0));
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for cap in [-half, half] {
                        let t = (cap - o.z) / d.z;
                        let px = o.x + t * d.x;
                        let py = o.y + t * d.y;
                        if px * px + py * py <= radius * radius {
                            consider(t, Point3::new(0.0, 0.0, cap.signum()));
                        }
                    }
                }
                best
            }
            Shape::Box { center, extents, yaw } => {
                let (s, c) = yaw.sin_cos();
                let rel = *origin - Point3::from_array(*center);
                let o = [c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z];
                let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let (mut near_axis, mut near_sign) = (0usize, 0.0);
                let (mut far_axis, mut far_sign) = (0usize, 0.0);
                for k in 0..3 {
                    let h = 0.5 * extents[k];
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h - o[k]) / d[k];
                    let t2 = (h - o[k]) / d[k];
                    let (lo, hi, lo_sign) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = k;
                        near_sign = lo_sign;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = k;
                        far_sign = -lo_sign;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis, sign) = if t_near > RAY_EPS {
                    (t_near, near_axis, near_sign)
                } else if t_far > RAY_EPS {
                    (t_far, far_axis, far_sign)
                } else {
                    return None;
                };
                let mut nl = [0.0; 3];
                nl[axis] = sign;
                let n = Point3::new(c * nl[0] - s * nl[1], s * nl[0] + c * nl[1], nl[2]);
                Some((t, n))
            }
        }
    }

    /// Exact Euclidean distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        match &self.shape {
            Shape::Cylinder {
                center,
                radius,
                height,
                axis,
            } => {
                let (_, _, a) = cylinder_basis(*axis);
                let rel = *p - Point3::from_array(*center);
                let h = rel.dot(&a);
                let radial = (rel - a.scale(h)).norm();
                let dr = radial - radius;
                let dh = h.abs() - 0.5 * height;
                if dr <= 0.0 && dh <= 0.0 {
                    (-dr).min(-dh)
                } else {
                    dr.max(0.0).hypot(dh.max(0.0))
                }
            }
            Shape::Box { center, extents, yaw } => {
                let (s, c) = yaw.sin_cos();
                let rel = *p - Point3::from_array(*center);
                let q = [
                    (c * rel.x + s * rel.y).abs() - 0.5 * extents[0],
                    (-s * rel.x + c * rel.y).abs() - 0.5 * extents[1],
                    rel.z.abs() - 0.5 * extents[2],
                ];
                if q.iter().all(|&v| v <= 0.0) {
                    -q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
                }
            }
        }
    }

    /// Loose bounding sphere `(center, radius)` used for ray culling.
    pub fn bounding_sphere(&self) -> (Point3, f64) {
        match &self.shape {
            Shape::Cylinder {
                center, radius, height, ..
            } => (Point3::from_array(*center), radius.hypot(0.5 * height)),
            Shape::Box { center, extents, .. } => (
                Point3::from_array(*center),
                0.5 * (extents[0].powi(2) + extents[1].powi(2) + extents[2].powi(2)).sqrt(),
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub name: String,
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(name: impl Into<String>, primitives: Vec<Primitive>) -> Result<Self> {
        let s = Self {
            name: name.into(),
            primitives,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.primitives {
            p.validate()?;
            if !seen.insert(p.instance) {
                return Err(Error::InvalidScene(format!("duplicate instance id {}", p.instance)));
            }
        }
        Ok(())
    }

    /// First surface hit along a unit ray within `max_range`.
    pub fn raycast(&self, origin: &Point3, dir: &Point3, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            let (c, r) = prim.bounding_sphere();
            let oc = c - *origin;
            let along = oc.dot(dir);
            if along + r < 0.0 || along - r > max_range {
                continue;
            }
            let perp2 = oc.dot(&oc) - along * along;
            if perp2 > r * r {
                continue;
            }
            if let Some((t, n)) = prim.intersect(origin, dir) {
                if t <= max_range && best.is_none_or(|b| t < b.distance) {
                    best = Some(Hit {
                        distance: t,
                        normal: n,
                        primitive: i,
                    });
                }
            }
        }
        best
    }
}

/// Minimum distance from `p` to the union of primitive surfaces.
pub fn distance_to_scene(scene: &Scene, p: &Point3) -> Result<f64> {
    scene
        .primitives
        .iter()
        .map(|prim| prim.surface_distance(p))
        .reduce(f64::min)
        .ok_or(Error::EmptyScene)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroundTruthLabel {
    Known { class: String, instance: u32 },
    Unknown,
}

pub const DEFAULT_LABEL_GATE: f64 = 2.0;

/// Class and instance of the primitive nearest to the cluster centroid.
/// `cluster_points` must be expressed in the scene frame. Ties go to the
/// lowest instance id.
pub fn oracle_label(scene: &Scene, cluster_points: &PointCloud, gate: f64) -> GroundTruthLabel {
    if cluster_points.is_empty() {
        return GroundTruthLabel::Unknown;
    }
    let n = cluster_points.len() as f64;
    let sum = cluster_points.points.iter().fold(Point3::zero(), |acc, p| acc + *p);
    let centroid = sum.scale(1.0 / n);
    let best = scene
        .primitives
        .iter()
        .map(|p| (p.surface_distance(&centroid), p))
        .min_by(|(da, pa), (db, pb)| da.total_cmp(db).then(pa.instance.cmp(&pb.instance)));
    match best {
        Some((d, p)) if d <= gate => GroundTruthLabel::Known {
            class: p.class.clone(),
            instance: p.instance,
        },
        _ => GroundTruthLabel::Unknown,
    }
}

/// Scripted route stored alongside a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    /// Vehicle z coordinate in the scene frame.
    #[serde(default)]
    pub depth: f64,
    pub speed: f64,
    /// Turn-in-place rate, degrees per second.
    #[serde(default = "default_turn_rate")]
    pub turn_rate_deg: f64,
    /// Waypoints `[x, y, yaw_deg]`.
    pub waypoints: Vec<[f64; 3]>,
}

fn default_turn_rate() -> f64 {
    10.0
}

impl RouteSpec {
    pub fn waypoint_poses(&self) -> Vec<Pose2> {
        self.waypoints
            .iter()
            .map(|w| Pose2::new(w[0], w[1], w[2].to_radians()))
            .collect()
    }
}

/// On-disk scene: primitives plus an optional scripted route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub route: Option<RouteSpec>,
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<Primitive>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: SceneFile = toml::from_str(text).map_err(|e| Error::Parse {
            what: "scene".into(),
            message: e.to_string(),
        })?;
        f.scene()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                what: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::new(self.name.clone(), self.primitives.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn piling(instance: u32, x: f64, y: f64) -> Primitive {
        Primitive {
            shape: Shape::Cylinder {
                center: [x, y, 0.0],
                radius: 0.3,
                height: 8.0,
                axis: [0.0, 0.0, 1.0],
            },
            class: "piling".into(),
            instance,
        }
    }

    fn dock() -> Primitive {
        Primitive {
            shape: Shape::Box {
                center: [3.0, -2.0, 1.0],
                extents: [4.0, 2.0, 1.0],
                yaw: 0.4,
            },
            class: "dock".into(),
            instance: 9,
        }
    }

    #[test]
    fn cylinder_distances() {
        let s = Scene::new("t", vec![piling(1, 0.0, 0.0)]).unwrap();
        assert!(distance_to_scene(&s, &Point3::new(0.3, 0.0, 1.0)).unwrap().abs() < 1e-12);
        assert!((distance_to_scene(&s, &Point3::new(0.0, 0.0, 0.0)).unwrap() - 0.3).abs() < 1e-12);
        assert!((distance_to_scene(&s, &Point3::new(1.3, 0.0, 0.0)).unwrap() - 1.0).abs() < 1e-12);
        // Beyond the top cap, outside the radius.
        let d = distance_to_scene(&s, &Point3::new(0.6, 0.0, 8.0)).unwrap();
        assert!((d - 0.3f64.hypot(4.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_error() {
        let s = Scene::default();
        assert!(matches!(distance_to_scene(&s, &Point3::zero()), Err(Error::EmptyScene)));
    }

    #[test]
    fn box_distance_matches_surface_sampling() {
        // Oracle: sample the six faces on a dense grid (>= 1e5 samples) and
        // take the nearest sample. Tolerance is the sample spacing.
        let prim = dock();
        let Shape::Box { center, extents, yaw } = prim.shape.clone() else {
            unreachable!()
        };
        let (s, c) = yaw.sin_cos();
        let n = 130usize;
        let mut samples = Vec::new();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                for i in 0..=n {
                    for j in 0..=n {
                        let mut l = [0.0; 3];
                        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                        l[axis] = sign * 0.5 * extents[axis];
                        l[a1] = (i as f64 / n as f64 - 0.5) * extents[a1];
                        l[a2] = (j as f64 / n as f64 - 0.5) * extents[a2];
                        samples.push(Point3::new(
                            center[0] + c * l[0] - s * l[1],
                            center[1] + s * l[0] + c * l[1],
                            center[2] + l[2],
                        ));
                    }
                }
            }
        }
        assert!(samples.len() >= 100_000);
        let spacing = extents.iter().cloned().fold(0.0, f64::max) / n as f64;
        let scene = Scene::new("t", vec![prim]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let p = Point3::new(
                rng.random_range(-2.0..8.0),
                rng.random_range(-6.0..2.0),
                rng.random_range(-2.0..4.0),
            );
            let oracle = samples.iter().map(|q| q.distance(&p)).fold(f64::INFINITY, f64::min);
            let exact = distance_to_scene(&scene, &p).unwrap();
            assert!(exact <= oracle + 1e-12, "{exact} > {oracle}");
            assert!(oracle - exact <= spacing, "{exact} vs {oracle}");
        }
    }

    #[test]
    fn raycast_cylinder_front_face() {
        let s = Scene::new("t", vec![piling(1, 10.0, 0.0)]).unwrap();
        let hit = s.raycast(&Point3::zero(), &Point3::new(1.0, 0.0, 0.0), 30.0).unwrap();
        assert!((hit.distance - 9.7).abs() < 1e-12);
        assert!((hit.normal.x + 1.0).abs() < 1e-12);
        assert!(s.raycast(&Point3::zero(), &Point3::new(0.0, 1.0, 0.0), 30.0).is_none());
        assert!(s.raycast(&Point3::zero(), &Point3::new(1.0, 0.0, 0.0), 9.0).is_none());
    }

    #[test]
    fn raycast_box_and_horizontal_cylinder() {
        let b = Primitive {
            shape: Shape::Box {
                center: [5.0, 0.0, 0.0],
                extents: [2.0, 2.0, 2.0],
                yaw: 0.0,
            },
            class: "dock".into(),
            instance: 1,
        };
        let (t, n) = b.intersect(&Point3::zero(), &Point3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t - 4.0).abs() < 1e-12 && (n.x + 1.0).abs() < 1e-12);
        let fuselage = Primitive {
            shape: Shape::Cylinder {
                center: [0.0, 6.0, 0.0],
                radius: 1.0,
                height: 10.0,
                axis: [1.0, 0.0, 0.0],
            },
            class: "aircraft".into(),
            instance: 2,
        };
        let (t, n) = fuselage
            .intersect(&Point3::zero(), &Point3::new(0.0, 1.0, 0.0))
            .unwrap();
        assert!((t - 5.0).abs() < 1e-12 && (n.y + 1.0).abs() < 1e-12);
        // Cap hit along the axis.
        let (t, n) = fuselage
            .intersect(&Point3::new(-10.0, 6.0, 0.0), &Point3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert!((t - 5.0).abs() < 1e-12 && (n.x + 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_labels() {
        let scene = Scene::new(
            "t",
            vec![piling(1, 0.0, 0.0), piling(3, 10.0, 0.0), piling(2, 0.0, 10.0)],
        )
        .unwrap();
        let on_three = PointCloud::from_points("world", vec![Point3::new(9.7, 0.1, 0.0), Point3::new(9.7, -0.1, 0.0)]);
        assert_eq!(
            oracle_label(&scene, &on_three, DEFAULT_LABEL_GATE),
            GroundTruthLabel::Known {
                class: "piling".into(),
                instance: 3
            }
        );
        let far = PointCloud::from_points("world", vec![Point3::new(-10.3, 0.0, 0.0)]);
        assert_eq!(
            oracle_label(&scene, &far, DEFAULT_LABEL_GATE),
            GroundTruthLabel::Unknown
        );
        // Equidistant from instances 1 and 3.
        let mid = PointCloud::from_points("world", vec![Point3::new(5.0, 0.0, 0.0)]);
        assert_eq!(
            oracle_label(&scene, &mid, 10.0),
            GroundTruthLabel::Known {
                class: "piling".into(),
                instance: 1
            }
        );
    }

    #[test]
    fn scene_file_round_trip_and_validation() {
        let file = SceneFile {
            name: "t".into(),
            description: "two things".into(),
            route: Some(RouteSpec {
                depth: 0.0,
                speed: 0.5,
                turn_rate_deg: 10.0,
                waypoints: vec![[0.0, 0.0, 0.0], [10.0, 0.0, 90.0]],
            }),
            primitives: vec![piling(1, 0.0, 0.0), dock()],
        };
        let text = file.to_toml();
        assert_eq!(SceneFile::parse(&text).unwrap(), file);
        let dup = text.replace("instance = 9", "instance = 1");
        assert!(matches!(SceneFile::parse(&dup), Err(Error::InvalidScene(_))));
        assert!(matches!(SceneFile::parse("primitive = 3"), Err(Error::Parse { .. })));
    }
}
