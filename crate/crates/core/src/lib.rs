//! Dense 3D mapping with a pair of orthogonal wide-aperture imaging sonars.
//!
//! The crate contains three mapping strategies that share one keyframe
//! pose-graph back-end:
//!
//! * **fusion**: each keyframe keeps the 3D points recovered by matching
//!   pixels across the concurrent horizontal and vertical images;
//! * **inference**: per-class height distributions learned from fused points
//!   fill in the elevation of horizontal-only detections;
//! * **submapping**: every fused frame between keyframes is kept relative to
//!   its keyframe and re-projected whenever the graph is re-optimized.
//!
//! A ray-casting simulator ([`simworld`]) provides images, trajectories and
//! ground truth; [`pipeline`] runs scenarios and keyframe sweeps.
//!
//! Geometry is generic over the scalar type; the aliases below fix it to
//! `f64`, which the rest of the crate uses.

pub mod detect;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod inference;
pub mod pipeline;
pub mod scalar;
pub mod simworld;
pub mod slam;
pub mod submap;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PolarPoint = geometry::PolarPoint<f64>;
pub type Point3 = geometry::Point3<f64>;
pub type Pose2 = geometry::Pose2<f64>;
pub type Pose3 = geometry::Pose3<f64>;
pub type PointCloud = geometry::PointCloud<f64>;

pub type PolarPointF32 = geometry::PolarPoint<f32>;
pub type Point3F32 = geometry::Point3<f32>;
pub type Pose2F32 = geometry::Pose2<f32>;
pub type Pose3F32 = geometry::Pose3<f32>;
pub type PointCloudF32 = geometry::PointCloud<f32>;

/// Name of the fixed map frame.
pub const WORLD_FRAME: &str = "world";
/// Name of the vehicle body frame at capture time.
pub const BODY_FRAME: &str = "body";
