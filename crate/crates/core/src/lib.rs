//! Articulated bicycle pose toolkit.
//!
//! An 11-keypoint bicycle is described by a canonical shape template plus an
//! 8D pose: pedal angle, steering angle, three body rotation angles, and a
//! 3D translation. This crate provides the forward kinematics of that model,
//! a synthetic ground-truth dataset generator with a pinhole camera, the
//! training-style loss stack, an optimization-based pose solver, and the
//! evaluation metric suite (per-parameter MAE, rotation/translation errors,
//! 3D IoU average recall, ADD, and 2D keypoint recall).
//!
//! Pipeline overview:
//!
//! 1. [`model`] poses the canonical template: shape residuals, steering and
//!    pedal articulation, body rotation, translation.
//! 2. [`synth`] samples poses and shapes, projects through [`geometry`]'s
//!    camera, and emits annotation records.
//! 3. [`solver`] recovers the 8D pose from observed 2D keypoints by
//!    multi-start Levenberg-Marquardt on the reprojection objective.
//! 4. [`losses`] and [`metrics`] score predictions against ground truth.
//! 5. [`oracle`] re-derives the kinematics and IoU volumes by independent
//!    methods for cross-checking.

pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod synth;

pub use geometry::{
    angular_diff, apply_crop, crop_from_box, project_point, rotation_from_euler, BBox2D, Camera,
    CropTransform, GeometryError, Rotation3, Vec3,
};
pub use losses::{loss_terms, LossBreakdown, LossError, LossSample, LossWeights};
pub use metrics::{
    add_metric, build_report, iou3d, mae_per_parameter, pose_errors, IouMode, MetricsError,
    MetricsReport, PoseErrors, PoseMae, PredictionRecord,
};
pub use model::{
    bounding_box_3d, canonical_keypoints, derive_bbox2d, project_keypoints, repose, repose_box,
    CanonicalTemplate, KeypointId, KeypointSet3D, ModelError, OrientedBox3D, Pose8D, ResidualSet,
};
pub use solver::{fit_pose, objective, Observation, SolveError, SolveResult, SolverConfig};
pub use synth::{
    generate_dataset, read_records, sample_pose, sample_residuals, write_records,
    AnnotationRecord, DatasetConfig, DatasetError, DatasetHeader, ParamDomain, Split,
};
