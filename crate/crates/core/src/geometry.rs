//! Geometry primitives: polar/Cartesian measurements, planar and spatial
//! rigid transforms, and framed point clouds.
//!
//! Conventions: body frame is x forward, y left, z up. Bearing is measured
//! from +x toward +y, elevation from the xy-plane toward +z. Angles are
//! radians throughout.

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Scalar};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// A sonar return in spherical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PolarPoint<T> {
    pub range: T,
    pub bearing: T,
    pub elevation: T,
    pub intensity: T,
}

impl<T: Scalar> PolarPoint<T> {
    /// Builds a polar point, wrapping both angles into `[-pi, pi)`.
    pub fn new(range: T, bearing: T, elevation: T, intensity: T) -> Self {
        debug_assert!(range >= T::zero(), "negative range");
        Self {
            range,
            bearing: wrap_angle(bearing),
            elevation: wrap_angle(elevation),
            intensity,
        }
    }

    pub fn to_cartesian(&self) -> Point3<T> {
        polar_to_cartesian(self)
    }
}

/// `R * (cos(phi) cos(theta), cos(phi) sin(theta), sin(phi))`.
pub fn polar_to_cartesian<T: Scalar>(p: &PolarPoint<T>) -> Point3<T> {
    let (st, ct) = p.bearing.sin_cos();
    let (sp, cp) = p.elevation.sin_cos();
    Point3::new(p.range * cp * ct, p.range * cp * st, p.range * sp)
}

/// Inverse of [`polar_to_cartesian`]; intensity is set to zero.
pub fn cartesian_to_polar<T: Scalar>(p: &Point3<T>) -> PolarPoint<T> {
    let range = p.norm();
    let planar = p.x.hypot(p.y);
    PolarPoint::new(range, p.y.atan2(p.x), p.z.atan2(planar), T::zero())
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Planar rigid transform `(x, y, yaw)` with yaw in `[-pi, pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2<T> {
    pub x: T,
    pub y: T,
    pub yaw: T,
}

impl<T: Scalar> Pose2<T> {
    pub fn new(x: T, y: T, yaw: T) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn compose(&self, o: &Self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self::new(self.x + c * o.x - s * o.y, self.y + s * o.x + c * o.y, self.yaw + o.yaw)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }

    /// `self^-1 * other`: `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_xy(&self, x: T, y: T) -> (T, T) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    pub fn translation_norm(&self) -> T {
        self.x.hypot(self.y)
    }

    /// SE(2) exponential of the tangent vector `(rho_x, rho_y, theta)`.
    pub fn exp(v: [T; 3]) -> Self {
        let theta = v[2];
        let (a, b) = se2_v_coeffs(theta);
        Self::new(a * v[0] - b * v[1], b * v[0] + a * v[1], theta)
    }

    /// SE(2) logarithm, inverse of [`Pose2::exp`] for yaw in `[-pi, pi)`.
    pub fn log(&self) -> [T; 3] {
        let (a, b) = se2_v_coeffs(self.yaw);
        let det = a * a + b * b;
        [
            (a * self.x + b * self.y) / det,
            (-b * self.x + a * self.y) / det,
            self.yaw,
        ]
    }

    pub fn to_pose3(&self) -> Pose3<T> {
        Pose3::from_xyz_rpy(self.x, self.y, T::zero(), T::zero(), T::zero(), self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t)` of the SE(2) left Jacobian.
fn se2_v_coeffs<T: Scalar>(theta: T) -> (T, T) {
    if theta.abs() < T::lit(1e-6) {
        let t2 = theta * theta;
        (
            T::one() - t2 / T::lit(6.0),
            theta / T::lit(2.0) - theta * t2 / T::lit(24.0),
        )
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta)
    }
}

pub type Mat3<T> = [[T; 3]; 3];

fn mat_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_transpose<T: Scalar>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn mat_vec<T: Scalar>(a: &Mat3<T>, v: &Point3<T>) -> Point3<T> {
    Point3::new(
        a[0][0] * v.x + a[0][1] * v.y + a[0][2] * v.z,
        a[1][0] * v.x + a[1][1] * v.y + a[1][2] * v.z,
        a[2][0] * v.x + a[2][1] * v.y + a[2][2] * v.z,
    )
}

fn mat_identity<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Rotation matrix from an axis-angle vector (Rodrigues).
pub fn rotation_exp<T: Scalar>(w: Point3<T>) -> Mat3<T> {
    let angle = w.norm();
    if angle < T::lit(1e-12) {
        let mut r = mat_identity();
        r[0][1] = -w.z;
        r[0][2] = w.y;
        r[1][0] = w.z;
        r[1][2] = -w.x;
        r[2][0] = -w.y;
        r[2][1] = w.x;
        return r;
    }
    let k = w.scale(T::one() / angle);
    let (s, c) = angle.sin_cos();
    let v = T::one() - c;
    [
        [c + k.x * k.x * v, k.x * k.y * v - k.z * s, k.x * k.z * v + k.y * s],
        [k.y * k.x * v + k.z * s, c + k.y * k.y * v, k.y * k.z * v - k.x * s],
        [k.z * k.x * v - k.y * s, k.z * k.y * v + k.x * s, c + k.z * k.z * v],
    ]
}

/// Axis-angle vector of a rotation matrix, angle in `[0, pi]`.
pub fn rotation_log<T: Scalar>(r: &Mat3<T>) -> Point3<T> {
    // Shepperd's quaternion extraction stays well conditioned near pi.
    let trace = r[0][0] + r[1][1] + r[2][2];
    let one = T::one();
    let two = T::lit(2.0);
    let quarter = T::lit(0.25);
    let (w, x, y, z);
    if trace > r[0][0] && trace > r[1][1] && trace > r[2][2] {
        let s = (trace + one).sqrt() * two;
        w = quarter * s;
        x = (r[2][1] - r[1][2]) / s;
        y = (r[0][2] - r[2][0]) / s;
        z = (r[1][0] - r[0][1]) / s;
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (one + r[0][0] - r[1][1] - r[2][2]).sqrt() * two;
        w = (r[2][1] - r[1][2]) / s;
        x = quarter * s;
        y = (r[0][1] + r[1][0]) / s;
        z = (r[0][2] + r[2][0]) / s;
    } else if r[1][1] > r[2][2] {
        let s = (one + r[1][1] - r[0][0] - r[2][2]).sqrt() * two;
        w = (r[0][2] - r[2][0]) / s;
        x = (r[0][1] + r[1][0]) / s;
        y = quarter * s;
        z = (r[1][2] + r[2][1]) / s;
    } else {
        let s = (one + r[2][2] - r[0][0] - r[1][1]).sqrt() * two;
        w = (r[1][0] - r[0][1]) / s;
        x = (r[0][2] + r[2][0]) / s;
        y = (r[1][2] + r[2][1]) / s;
        z = quarter * s;
    }
    let (w, v) = if w < T::zero() {
        (-w, Point3::new(-x, -y, -z))
    } else {
        (w, Point3::new(x, y, z))
    };
    let vn = v.norm();
    if vn < T::lit(1e-12) {
        return v.scale(two);
    }
    let angle = two * vn.atan2(w);
    v.scale(angle / vn)
}

/// Spatial rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3<T> {
    pub rotation: Mat3<T>,
    pub translation: Point3<T>,
}

impl<T: Scalar> Default for Pose3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Pose3<T> {
    pub fn identity() -> Self {
        Self {
            rotation: mat_identity(),
            translation: Point3::zero(),
        }
    }

    pub fn from_translation(x: T, y: T, z: T) -> Self {
        Self {
            rotation: mat_identity(),
            translation: Point3::new(x, y, z),
        }
    }

    /// `Trans(x, y, z) * Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_xyz_rpy(x: T, y: T, z: T, roll: T, pitch: T, yaw: T) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        let rotation = [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ];
        Self {
            rotation,
            translation: Point3::new(x, y, z),
        }
    }

    pub fn from_axis_angle(w: Point3<T>, translation: Point3<T>) -> Self {
        Self {
            rotation: rotation_exp(w),
            translation,
        }
    }

    /// `(roll, pitch, yaw)` of the ZYX decomposition.
    pub fn rpy(&self) -> (T, T, T) {
        let r = &self.rotation;
        let pitch = (-r[2][0]).max(-T::one()).min(T::one()).asin();
        let roll = r[2][1].atan2(r[2][2]);
        let yaw = r[1][0].atan2(r[0][0]);
        (roll, pitch, yaw)
    }

    /// Drops z, roll and pitch.
    pub fn to_pose2(&self) -> Pose2<T> {
        let (_, _, yaw) = self.rpy();
        Pose2::new(self.translation.x, self.translation.y, yaw)
    }

    pub fn compose(&self, o: &Self) -> Self {
        compose(self, o)
    }

    pub fn inverse(&self) -> Self {
        invert(self)
    }

    pub fn transform_point(&self, p: &Point3<T>) -> Point3<T> {
        mat_vec(&self.rotation, p) + self.translation
    }

    pub fn to_homogeneous(&self) -> [[T; 4]; 4] {
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.rotation[i][j];
            }
        }
        m[0][3] = self.translation.x;
        m[1][3] = self.translation.y;
        m[2][3] = self.translation.z;
        m[3][3] = T::one();
        m
    }

    /// Orthonormality and handedness within `tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        let rtr = mat_mul(&mat_transpose(&self.rotation), &self.rotation);
        let id: Mat3<T> = mat_identity();
        for i in 0..3 {
            for j in 0..3 {
                if (rtr[i][j] - id[i][j]).abs() > tol {
                    return false;
                }
            }
        }
        let r = &self.rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        (det - T::one()).abs() <= tol && self.translation.is_finite()
    }

    /// Largest absolute element-wise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, o: &Self) -> T {
        let a = self.to_homogeneous();
        let b = o.to_homogeneous();
        let mut d = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((a[i][j] - b[i][j]).abs());
            }
        }
        d
    }
}

impl<T: Scalar> Mul for Pose3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        compose(&self, &o)
    }
}

pub fn compose<T: Scalar>(a: &Pose3<T>, b: &Pose3<T>) -> Pose3<T> {
    Pose3 {
        rotation: mat_mul(&a.rotation, &b.rotation),
        translation: mat_vec(&a.rotation, &b.translation) + a.translation,
    }
}

pub fn invert<T: Scalar>(a: &Pose3<T>) -> Pose3<T> {
    let rt = mat_transpose(&a.rotation);
    Pose3 {
        rotation: rt,
        translation: -mat_vec(&rt, &a.translation),
    }
}

/// Linear translation, geodesic rotation. `t = 0` and `t = 1` return the
/// endpoints exactly.
pub fn interpolate_pose<T: Scalar>(a: &Pose3<T>, b: &Pose3<T>, t: T) -> Pose3<T> {
    debug_assert!(t >= T::zero() && t <= T::one(), "fraction outside [0, 1]");
    if t <= T::zero() {
        return *a;
    }
    if t >= T::one() {
        return *b;
    }
    let relative = mat_mul(&mat_transpose(&a.rotation), &b.rotation);
    let step = rotation_exp(rotation_log(&relative).scale(t));
    Pose3 {
        rotation: mat_mul(&a.rotation, &step),
        translation: a.translation + (b.translation - a.translation).scale(t),
    }
}

/// Points tagged with the frame they are expressed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T> {
    pub points: Vec<Point3<T>>,
    pub frame: String,
    pub intensity: Option<Vec<T>>,
    pub labels: Option<Vec<u32>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(frame: impl Into<String>) -> Self {
        let frame = frame.into();
        assert!(!frame.is_empty(), "frame identifier must be nonempty");
        Self {
            points: Vec::new(),
            frame,
            intensity: None,
            labels: None,
        }
    }

    pub fn from_points(frame: impl Into<String>, points: Vec<Point3<T>>) -> Self {
        let mut c = Self::new(frame);
        c.points = points;
        c
    }

    pub fn with_intensity(mut self, intensity: Vec<T>) -> Self {
        assert_eq!(intensity.len(), self.points.len());
        self.intensity = Some(intensity);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends a point, padding optional channels with zeros.
    pub fn push(&mut self, p: Point3<T>, intensity: T) {
        self.points.push(p);
        match &mut self.intensity {
            Some(v) => v.push(intensity),
            None if intensity != T::zero() => {
                let mut v = vec![T::zero(); self.points.len() - 1];
                v.push(intensity);
                self.intensity = Some(v);
            }
            None => {}
        }
        if let Some(l) = &mut self.labels {
            l.push(0);
        }
    }

    pub fn intensity_at(&self, i: usize) -> T {
        self.intensity.as_ref().map_or(T::zero(), |v| v[i])
    }

    /// Appends `other`, which must share this cloud's frame.
    pub fn extend_from(&mut self, other: &Self) -> Result<()> {
        if other.frame != self.frame {
            return Err(Error::FrameMismatch {
                expected: self.frame.clone(),
                found: other.frame.clone(),
            });
        }
        let n = self.points.len();
        self.points.extend_from_slice(&other.points);
        if self.intensity.is_some() || other.intensity.is_some() {
            let mut mine = self.intensity.take().unwrap_or_else(|| vec![T::zero(); n]);
            match &other.intensity {
                Some(v) => mine.extend_from_slice(v),
                None => mine.extend(std::iter::repeat_n(T::zero(), other.len())),
            }
            self.intensity = Some(mine);
        }
        if self.labels.is_some() || other.labels.is_some() {
            let mut mine = self.labels.take().unwrap_or_else(|| vec![0; n]);
            match &other.labels {
                Some(v) => mine.extend_from_slice(v),
                None => mine.extend(std::iter::repeat_n(0, other.len())),
            }
            self.labels = Some(mine);
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        !self.frame.is_empty()
            && self.points.iter().all(Point3::is_finite)
            && self.intensity.as_ref().is_none_or(|v| v.len() == self.points.len())
            && self.labels.as_ref().is_none_or(|v| v.len() == self.points.len())
    }
}

/// Maps every point by `t`; the result is expressed in `frame`.
pub fn transform_cloud<T: Scalar>(t: &Pose3<T>, c: &PointCloud<T>, frame: &str) -> PointCloud<T> {
    PointCloud {
        points: c.points.iter().map(|p| t.transform_point(p)).collect(),
        frame: frame.to_string(),
        intensity: c.intensity.clone(),
        labels: c.labels.clone(),
    }
}

/// Integer voxel index of a point under floor(coordinate / size).
pub fn voxel_key<T: Scalar>(p: &Point3<T>, size: T) -> (i64, i64, i64) {
    let k = |v: T| (v / size).floor().to_i64().unwrap_or(i64::MAX);
    (k(p.x), k(p.y), k(p.z))
}

/// Keeps the first point falling in each voxel, in input order, along with
/// its channels.
pub fn voxel_downsample<T: Scalar>(c: &PointCloud<T>, size: T) -> PointCloud<T> {
    let mut seen = std::collections::HashSet::new();
    let keep: Vec<usize> = (0..c.len())
        .filter(|&i| seen.insert(voxel_key(&c.points[i], size)))
        .collect();
    PointCloud {
        points: keep.iter().map(|&i| c.points[i]).collect(),
        frame: c.frame.clone(),
        intensity: c.intensity.as_ref().map(|v| keep.iter().map(|&i| v[i]).collect()),
        labels: c.labels.as_ref().map(|v| keep.iter().map(|&i| v[i]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn polar_axis_cases() {
        let p = polar_to_cartesian(&PolarPoint::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(p, Point3::new(1.0, 0.0, 0.0));
        let p = polar_to_cartesian(&PolarPoint::new(2.0, FRAC_PI_2, 0.0, 0.0));
        assert!(close(p.x, 0.0, 1e-15) && close(p.y, 2.0, 1e-15) && p.z == 0.0);
    }

    #[test]
    fn polar_general_case() {
        // Evaluated independently at 30 significant digits:
        // 10*cos(-0.1)*cos(0.3), 10*cos(-0.1)*sin(0.3), 10*sin(-0.1).
        let p = polar_to_cartesian(&PolarPoint::new(10.0, 0.3, -0.1, 0.0));
        assert!(close(p.x, 9.505_637_859_220_634, 1e-12), "{}", p.x);
        assert!(close(p.y, 2.940_438_365_518_559, 1e-12), "{}", p.y);
        assert!(close(p.z, -0.998_334_166_468_281_5, 1e-12), "{}", p.z);
    }

    #[test]
    fn f32_variant() {
        let p = polar_to_cartesian(&PolarPoint::new(2.0_f32, 0.0, 0.0, 0.0));
        assert_eq!(p, Point3::new(2.0_f32, 0.0, 0.0));
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let p = Pose3::from_xyz_rpy(1.0, -2.0, 0.5, 0.1, -0.2, 2.0);
        assert_eq!(compose(&Pose3::identity(), &p), p);
        assert!(compose(&p, &invert(&p)).max_abs_diff(&Pose3::identity()) < 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose3::from_xyz_rpy(0.3, 1.2, -0.7, 0.4, 0.2, -1.1);
        let b = Pose3::from_xyz_rpy(-2.0, 0.5, 0.1, -0.3, 0.9, 2.7);
        let (ha, hb) = (a.to_homogeneous(), b.to_homogeneous());
        let mut prod = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    prod[i][j] += ha[i][k] * hb[k][j];
                }
            }
        }
        let c = compose(&a, &b).to_homogeneous();
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(c[i][j], prod[i][j], 1e-12));
            }
        }
    }

    #[test]
    fn transform_cloud_cases() {
        let c = PointCloud::from_points("body", vec![Point3::new(0.0, 0.0, 0.0)]);
        let t = Pose3::from_translation(1.0, 2.0, 3.0);
        let out = transform_cloud(&t, &c, "world");
        assert_eq!(out.points, vec![Point3::new(1.0, 2.0, 3.0)]);
        assert_eq!(out.frame, "world");
        let same = transform_cloud(&Pose3::identity(), &c, "body");
        assert_eq!(same, c);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Pose3::from_xyz_rpy(0.0, 0.0, 0.0, 0.1, 0.2, 0.3);
        let b = Pose3::from_xyz_rpy(2.0, 1.0, -1.0, -0.4, 0.0, 2.5);
        assert_eq!(interpolate_pose(&a, &b, 0.0), a);
        assert_eq!(interpolate_pose(&a, &b, 1.0), b);
        let m = interpolate_pose(&Pose3::identity(), &Pose3::from_translation(2.0, 0.0, 0.0), 0.5);
        assert_eq!(m.translation, Point3::new(1.0, 0.0, 0.0));
        // Pure yaw rotation interpolates the yaw angle.
        let r = interpolate_pose(
            &Pose3::identity(),
            &Pose3::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            0.25,
        );
        assert!(close(r.rpy().2, 0.25, 1e-12));
    }

    #[test]
    fn rotation_log_near_pi() {
        let w = Point3::new(0.0, 0.0, PI - 1e-9);
        let back = rotation_log(&rotation_exp(w));
        assert!(back.distance(&w) < 1e-6, "{back:?}");
        let w = Point3::new(1.0, 1.0, 0.0).scale(PI / 2f64.sqrt() * 0.999_999);
        let back = rotation_log(&rotation_exp(w));
        assert!(back.distance(&w) < 1e-6, "{back:?}");
    }

    #[test]
    fn se2_log_exp() {
        let p = Pose2::new(1.5, -0.3, 2.2);
        let q = Pose2::exp(p.log());
        assert!(close(p.x, q.x, 1e-12) && close(p.y, q.y, 1e-12) && close(p.yaw, q.yaw, 1e-12));
        let i = p.compose(&p.inverse());
        assert!(i.x.abs() < 1e-12 && i.y.abs() < 1e-12 && i.yaw.abs() < 1e-12);
    }

    #[test]
    fn extend_rejects_other_frame() {
        let mut a = PointCloud::<f64>::new("world");
        let b = PointCloud::<f64>::new("body");
        assert!(matches!(a.extend_from(&b), Err(Error::FrameMismatch { .. })));
    }

    fn pose_strategy() -> impl Strategy<Value = Pose3<f64>> {
        (
            -10.0..10.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
            -PI..PI,
            -1.5..1.5f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, r, p, yw)| Pose3::from_xyz_rpy(x, y, z, r, p, yw))
    }

    proptest! {
        #[test]
        fn polar_round_trip(r in 0.01..50.0f64, b in -3.1..3.1f64, e in -1.5..1.5f64) {
            let p = PolarPoint::new(r, b, e, 0.0);
            let q = cartesian_to_polar(&polar_to_cartesian(&p));
            prop_assert!(close(p.range, q.range, 1e-9));
            prop_assert!(close(p.bearing, q.bearing, 1e-9));
            prop_assert!(close(p.elevation, q.elevation, 1e-9));
        }

        #[test]
        fn compose_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            prop_assert!(l.max_abs_diff(&r) < 1e-9);
            prop_assert!(l.is_valid(1e-9));
        }

        #[test]
        fn transform_is_isometry(t in pose_strategy(), pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64), 2..12)) {
            let cloud = PointCloud::from_points("body", pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let moved = transform_cloud(&t, &cloud, "world");
            prop_assert_eq!(moved.len(), cloud.len());
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let d0 = cloud.points[i].distance(&cloud.points[j]);
                    let d1 = moved.points[i].distance(&moved.points[j]);
                    prop_assert!(close(d0, d1, 1e-9));
                }
            }
        }

        #[test]
        fn interpolation_stays_rigid(a in pose_strategy(), b in pose_strategy(), t in 0.0..1.0f64) {
            let m = interpolate_pose(&a, &b, t);
            prop_assert!(m.is_valid(1e-9));
        }
    }

    #[test]
    fn voxel_downsample_keeps_first_per_cell() {
        let pts = vec![
            Point3::new(0.01, 0.0, 0.0),
            Point3::new(0.09, 0.05, 0.0),
            Point3::new(-0.01, 0.0, 0.0),
            Point3::new(0.11, 0.0, 0.0),
        ];
        let c = PointCloud::from_points("world", pts).with_intensity(vec![1.0, 2.0, 3.0, 4.0]);
        let d = voxel_downsample(&c, 0.1);
        assert_eq!(d.len(), 3);
        assert_eq!(d.intensity, Some(vec![1.0, 3.0, 4.0]));
        let f = PointCloud::from_points(
            "world",
            vec![Point3::new(0.01f32, 0.0, 0.0), Point3::new(0.02, 0.0, 0.0)],
        );
        assert_eq!(voxel_downsample(&f, 0.1f32).len(), 1);
    }
}
