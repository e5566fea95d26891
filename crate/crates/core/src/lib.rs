//! Seven-parameter perspective camera poses for rigid object models.
//!
//! The camera is described by seven parameters: azimuth, elevation and
//! in-plane rotation of the viewing direction, the distance `d` from the
//! camera center to the model origin, the focal length `f` and the principal
//! point `(u, v)`. Points project through `P = K[R|T]` with `T = (0, 0, d)`.
//!
//! Besides the camera itself the crate provides
//!
//! - [`mesh`]: triangle meshes, a wavefront geometry reader, normalization and
//!   point sampling,
//! - [`field`]: a z-buffered rasterizer producing dense 3D location fields,
//!   crop/resize of fields and a synthetic pose sampler,
//! - [`metrics`]: rotation geodesic error, average distance of projected model
//!   points, aggregation and threshold accuracies,
//! - [`solver`]: pose recovery from field correspondences (DLT initialization
//!   followed by damped least squares),
//! - [`dataset`]: split rules, annotation workflow states, pose histograms and
//!   record validation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, corpus
//! generation, the CLI and the annotation service live in the `finepose`
//! crate.

#![no_std]
#![deny(rust_2018_idioms, unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod dataset;
pub mod field;
pub mod mesh;
pub mod metrics;
pub mod solver;

pub use camera::{
    angles_from_rotation, build_projection, decode_offset_target, decompose_projection,
    encode_offset_target, project_bbox, project_point, quat_from_rotation,
    rotation_from_angles, rotation_from_quat, BoundingBox2D, CameraError, EulerAngles,
    Intrinsics, OffsetTarget, PoseParams, ProjectionMatrix, RotationMatrix, UnitQuaternion,
};
pub use field::{
    crop_resize_field, rasterize_field, sample_pose, CropFrame, FieldError, LocationField,
    PixelFrame, PoseSamplerConfig,
};
pub use mesh::{load_mesh, normalize_mesh, sample_points, MeshError, TriangleMesh};
pub use metrics::{
    accuracy_curve, add_error, normalized_add, rotation_error, summarize, EvalRecord,
    EvalSummary, MetricsError,
};
pub use solver::{
    correspondences_from_field, linear_init, refine, solve_correspondences, solve_pose, Correspondence,
    CorrespondenceSet, InitSource, PoseState,
    SolveOptions, SolveResult, SolverError,
};
pub use dataset::{
    pose_histograms, split_random, split_standard, validate_pose, AnnotationStatus, DataSplit,
    DatasetError, Finding, PoseHistograms, SplitTag, ValidationConfig,
};
