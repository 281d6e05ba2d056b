//! Keyframe-anchored submaps and global map assembly.

use crate::error::{Error, Result};
use crate::geometry::{interpolate_pose, transform_cloud};
use crate::{PointCloud, Pose3, WORLD_FRAME};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Time-ordered dead-reckoning poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeadReckoning {
    samples: Vec<(f64, Pose3)>,
}

impl DeadReckoning {
    pub fn new(samples: Vec<(f64, Pose3)>) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::NonMonotonicTime {
                    time: w[1].0,
                    last: w[0].0,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn push(&mut self, time: f64, pose: Pose3) -> Result<()> {
        if let Some(&(last, _)) = self.samples.last() {
            if !(time > last) {
                return Err(Error::NonMonotonicTime { time, last });
            }
        }
        self.samples.push((time, pose));
        Ok(())
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.0, self.samples.last()?.0))
    }

    /// Pose at `time`, interpolated between the bracketing samples; exact
    /// sample times return the stored pose.
    pub fn pose_at(&self, time: f64) -> Result<Pose3> {
        let outside = || {
            let (start, end) = self.span().unwrap_or((f64::NAN, f64::NAN));
            Error::OutsideDeadReckoning { time, start, end }
        };
        let (start, end) = self.span().ok_or_else(outside)?;
        if !(time >= start && time <= end) {
            return Err(outside());
        }
        let i = self.samples.partition_point(|(t, _)| *t < time);
        let (t1, p1) = self.samples[i];
        if t1 == time {
            return Ok(p1);
        }
        let (t0, p0) = self.samples[i - 1];
        Ok(interpolate_pose(&p0, &p1, (time - t0) / (t1 - t0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmapEntry {
    pub time: f64,
    /// Capture pose relative to the anchor keyframe, from dead reckoning.
    pub relative: Pose3,
    /// Fused points in the body frame at capture.
    pub cloud: PointCloud,
}

/// Fused clouds gathered from one keyframe until the next. The keyframe's
/// own cloud is normally the first entry, at the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submap {
    pub anchor: usize,
    pub anchor_time: f64,
    pub anchor_dr: Pose3,
    pub entries: Vec<SubmapEntry>,
    closed: bool,
    /// Entry count fixed at closing.
    pub n: Option<usize>,
    /// Captures refused because dead reckoning did not cover them.
    pub rejected: usize,
}

impl Submap {
    pub fn new(anchor: usize, anchor_time: f64, anchor_dr: Pose3) -> Self {
        Self {
            anchor,
            anchor_time,
            anchor_dr,
            entries: Vec::new(),
            closed: false,
            n: None,
            rejected: 0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Appends a capture with transform `anchor_dr^-1 * dr(capture_time)`.
    pub fn accumulate(&mut self, cloud: PointCloud, capture_time: f64, dr: &DeadReckoning) -> Result<()> {
        if self.closed {
            return Err(Error::SubmapClosed(self.anchor));
        }
        if capture_time < self.anchor_time {
            return Err(Error::BeforeAnchor {
                time: capture_time,
                anchor: self.anchor_time,
            });
        }
        if let Some(last) = self.entries.last() {
            if !(capture_time > last.time) {
                return Err(Error::NonMonotonicTime {
                    time: capture_time,
                    last: last.time,
                });
            }
        }
        let pose = match dr.pose_at(capture_time) {
            Ok(p) => p,
            Err(e) => {
                self.rejected += 1;
                return Err(e);
            }
        };
        let relative = if capture_time == self.anchor_time {
            Pose3::identity()
        } else {
            self.anchor_dr.inverse().compose(&pose)
        };
        self.entries.push(SubmapEntry {
            time: capture_time,
            relative,
            cloud,
        });
        Ok(())
    }

    pub fn close(&mut self) {
        self.closed = true;
        self.n = Some(self.entries.len());
    }

    pub fn point_count(&self) -> usize {
        self.entries.iter().map(|e| e.cloud.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMode {
    Fusion,
    Inference,
    #[serde(alias = "submap")]
    Submapping,
}

impl MapMode {
    pub const ALL: [MapMode; 3] = [MapMode::Fusion, MapMode::Inference, MapMode::Submapping];

    pub fn name(&self) -> &'static str {
        match self {
            MapMode::Fusion => "fusion",
            MapMode::Inference => "inference",
            MapMode::Submapping => "submapping",
        }
    }
}

impl std::str::FromStr for MapMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(MapMode::Fusion),
            "inference" => Ok(MapMode::Inference),
            "submap" | "submapping" => Ok(MapMode::Submapping),
            other => Err(Error::InvalidParameter(format!("unknown map mode `{other}`"))),
        }
    }
}

/// World-frame map from keyframe poses.
///
/// Fusion and inference modes place one cloud per keyframe (`keyframe_clouds`:
/// fused or inference-augmented); submapping places every submap entry by
/// `pose[anchor] * relative`. Output order is keyframe id then entry index.
pub fn assemble_map(
    poses: &BTreeMap<usize, Pose3>,
    keyframe_clouds: &BTreeMap<usize, PointCloud>,
    submaps: &[Submap],
    mode: MapMode,
) -> Result<PointCloud> {
    let mut map = PointCloud::new(WORLD_FRAME);
    match mode {
        MapMode::Fusion | MapMode::Inference => {
            for (id, cloud) in keyframe_clouds {
                let pose = poses.get(id).ok_or(Error::MissingEstimate(*id))?;
                map.extend_from(&transform_cloud(pose, cloud, WORLD_FRAME))?;
            }
        }
        MapMode::Submapping => {
            let mut ordered: Vec<&Submap> = submaps.iter().collect();
            ordered.sort_by_key(|s| s.anchor);
            for sm in ordered {
                let pose = poses.get(&sm.anchor).ok_or(Error::MissingEstimate(sm.anchor))?;
                for e in &sm.entries {
                    let t = pose.compose(&e.relative);
                    map.extend_from(&transform_cloud(&t, &e.cloud, WORLD_FRAME))?;
                }
            }
        }
    }
    Ok(map)
}

/// ASCII PLY with `x y z intensity` vertices; intensity 0 when absent.
pub fn write_ply(cloud: &PointCloud, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "ply\nformat ascii 1.0\ncomment frame {}", cloud.frame)?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z", "intensity"] {
        writeln!(out, "property float {name}")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        writeln!(out, "{:.6} {:.6} {:.6} {:.6}", p.x, p.y, p.z, cloud.intensity_at(i))?;
    }
    Ok(())
}

/// `x,y,z,intensity` CSV with a header row.
pub fn write_xyz(cloud: &PointCloud, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "x,y,z,intensity")?;
    for (i, p) in cloud.points.iter().enumerate() {
        writeln!(out, "{:.6},{:.6},{:.6},{:.6}", p.x, p.y, p.z, cloud.intensity_at(i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Point3, BODY_FRAME};

    #[test]
    fn ply_header_and_rows() {
        let c = cloud(&[[1.0, 2.0, 3.0], [0.5, -0.25, 0.0]]);
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ply");
        assert!(lines.contains(&"element vertex 2"));
        let body = &lines[lines.iter().position(|l| *l == "end_header").unwrap() + 1..];
        assert_eq!(
            body,
            [
                "1.000000 2.000000 3.000000 0.000000",
                "0.500000 -0.250000 0.000000 0.000000"
            ]
        );
        let mut csv = Vec::new();
        write_xyz(&c, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    fn line_dr() -> DeadReckoning {
        DeadReckoning::new(
            (0..=50)
                .map(|k| (0.2 * k as f64, Pose3::from_translation(0.1 * k as f64, 0.0, 0.0)))
                .collect(),
        )
        .unwrap()
    }

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_points(BODY_FRAME, pts.iter().map(|&p| Point3::from_array(p)).collect())
    }

    #[test]
    fn anchor_instant_is_identity() {
        let dr = line_dr();
        let mut sm = Submap::new(0, 1.0, dr.pose_at(1.0).unwrap());
        sm.accumulate(cloud(&[[1.0, 0.0, 0.0]]), 1.0, &dr).unwrap();
        assert_eq!(sm.entries[0].relative, Pose3::identity());
    }

    #[test]
    fn sample_times_and_midpoints() {
        let dr = DeadReckoning::new(vec![
            (0.0, Pose3::identity()),
            (1.0, Pose3::from_translation(1.0, 0.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(dr.pose_at(1.0).unwrap(), Pose3::from_translation(1.0, 0.0, 0.0));
        let mut sm = Submap::new(0, 0.0, Pose3::identity());
        sm.accumulate(cloud(&[]), 0.5, &dr).unwrap();
        assert!((sm.entries[0].relative.translation.x - 0.5).abs() < 1e-15);
        sm.accumulate(cloud(&[]), 1.0, &dr).unwrap();
        assert_eq!(sm.entries[1].relative, Pose3::from_translation(1.0, 0.0, 0.0));
    }

    #[test]
    fn contract_errors() {
        let dr = line_dr();
        let mut sm = Submap::new(3, 2.0, dr.pose_at(2.0).unwrap());
        assert!(matches!(
            sm.accumulate(cloud(&[]), 1.0, &dr),
            Err(Error::BeforeAnchor { .. })
        ));
        assert!(matches!(
            sm.accumulate(cloud(&[]), 20.0, &dr),
            Err(Error::OutsideDeadReckoning { .. })
        ));
        assert_eq!(sm.rejected, 1);
        sm.accumulate(cloud(&[]), 3.0, &dr).unwrap();
        assert!(matches!(
            sm.accumulate(cloud(&[]), 3.0, &dr),
            Err(Error::NonMonotonicTime { .. })
        ));
        sm.close();
        assert_eq!(sm.n, Some(1));
        assert!(matches!(
            sm.accumulate(cloud(&[]), 4.0, &dr),
            Err(Error::SubmapClosed(3))
        ));
        let mut empty = Submap::new(4, 5.0, Pose3::identity());
        empty.close();
        assert_eq!(empty.n, Some(0));
    }

    #[test]
    fn five_hz_over_two_seconds() {
        // Captures at 5 Hz from the anchor up to, not including, the next keyframe.
        let dr = line_dr();
        let mut sm = Submap::new(0, 2.0, dr.pose_at(2.0).unwrap());
        let mut t = 2.0;
        while t < 4.0 - 1e-9 {
            sm.accumulate(cloud(&[[0.0, 0.0, 0.0]]), t, &dr).unwrap();
            t += 0.2;
        }
        sm.close();
        assert!((9..=10).contains(&sm.n.unwrap()));
    }

    #[test]
    fn single_identity_entry_passes_through() {
        let c = cloud(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let dr = line_dr();
        let mut sm = Submap::new(0, 0.0, Pose3::identity());
        sm.accumulate(c.clone(), 0.0, &dr).unwrap();
        let poses = BTreeMap::from([(0, Pose3::identity())]);
        let map = assemble_map(&poses, &BTreeMap::new(), &[sm], MapMode::Submapping).unwrap();
        assert_eq!(map.points, c.points);
    }

    #[test]
    fn fusion_equals_submapping_without_extra_entries() {
        let dr = line_dr();
        let poses = BTreeMap::from([
            (0, Pose3::from_translation(1.0, 0.0, 0.0)),
            (1, Pose3::from_xyz_rpy(3.0, 1.0, 0.0, 0.0, 0.0, 0.5)),
        ]);
        let clouds = BTreeMap::from([(0, cloud(&[[1.0, 0.0, 0.0]])), (1, cloud(&[[0.0, 2.0, 1.0]]))]);
        let sms: Vec<Submap> = clouds
            .iter()
            .map(|(&id, c)| {
                let t = 0.2 * id as f64;
                let mut sm = Submap::new(id, t, dr.pose_at(t).unwrap());
                sm.accumulate(c.clone(), t, &dr).unwrap();
                sm.close();
                sm
            })
            .collect();
        let a = assemble_map(&poses, &clouds, &sms, MapMode::Fusion).unwrap();
        let b = assemble_map(&poses, &clouds, &sms, MapMode::Submapping).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.len(), sms.iter().map(Submap::point_count).sum::<usize>());
    }

    #[test]
    fn missing_pose_is_named() {
        let sm = Submap::new(7, 0.0, Pose3::identity());
        let err = assemble_map(&BTreeMap::new(), &BTreeMap::new(), &[sm], MapMode::Submapping).unwrap_err();
        assert!(matches!(err, Error::MissingEstimate(7)));
    }

    #[test]
    fn reassembly_follows_pose_updates() {
        let dr = line_dr();
        let mut sm = Submap::new(0, 0.0, Pose3::identity());
        sm.accumulate(cloud(&[[1.0, 0.0, 0.0]]), 0.0, &dr).unwrap();
        sm.accumulate(cloud(&[[1.0, 0.0, 0.0]]), 1.0, &dr).unwrap();
        let mut poses = BTreeMap::from([(0, Pose3::identity())]);
        let a = assemble_map(&poses, &BTreeMap::new(), std::slice::from_ref(&sm), MapMode::Submapping).unwrap();
        assert!((a.points[1].x - 1.5).abs() < 1e-12);
        poses.insert(0, Pose3::from_translation(0.0, 2.0, 0.0));
        let b = assemble_map(&poses, &BTreeMap::new(), &[sm], MapMode::Submapping).unwrap();
        assert!((b.points[1].y - 2.0).abs() < 1e-12 && (b.points[1].x - 1.5).abs() < 1e-12);
    }

    #[test]
    fn mode_names_parse() {
        for m in MapMode::ALL {
            assert_eq!(m.name().parse::<MapMode>().unwrap(), m);
        }
        assert_eq!("submap".parse::<MapMode>().unwrap(), MapMode::Submapping);
        assert!("all".parse::<MapMode>().is_err());
    }
}
