//! Rigid-body geometry: SE(3) poses with `T(i←j)` semantics, the manifold
//! operators used by every optimizer in the crate, and pinhole projection.
//!
//! All manifold updates are right-multiplicative, `T · Exp(δ)`, with tangent
//! vectors ordered translation first: `δ = [ρ, φ]`.

mod camera;
mod se3;
pub mod so3;

pub use camera::{project, project_with_jacobian, CameraIntrinsics, ProjectionJacobian, MIN_DEPTH};
pub use se3::{
    rotation_half_angle, se3_left_jacobian, se3_left_jacobian_inv, se3_right_jacobian_inv, Pose,
    Tangent6, LOG_SINGULARITY_MARGIN,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("relative rotation of {angle} rad is too close to π for a unique logarithm")]
    NearPiRotation { angle: f64 },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("non-finite pose component")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}
