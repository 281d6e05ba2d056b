//! Per-image detection: CFAR segmentation, clustering and labels.

mod cfar;
mod classify;
mod dbscan;

pub use cfar::{
    cell_polar, detection_constant, leading_edge_cloud, mask_to_planar_cloud, soca_cfar, CfarParams, DetectionMask,
};
pub use classify::{
    classify, extract_instances, principal_extents, ClassLabel, Classifier, ClassifierInput, HeuristicClassifier,
    InstanceParams, IntensityPatch, ObjectInstance, OracleClassifier,
};
pub use dbscan::{dbscan, Clustering};
