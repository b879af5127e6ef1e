use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::hat;
use super::{GeometryError, Pose};

/// Points closer to the image plane than this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics. Camera frame is +z forward, +x right, +y down;
/// pixel coordinates are undistorted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width && px.y >= 0.0 && px.y <= self.height
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Normalized image coordinates `(x, y, 1)` of a pixel.
    pub fn normalized(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// Unit bearing vector of a pixel in the camera frame.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        self.normalized(px).normalize()
    }

    /// Derivative of the pixel with respect to the camera-frame point.
    pub fn projection_jacobian(&self, pc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz2,
        )
    }
}

/// Projects world point `x` through camera pose `T(cam←world)`.
/// Returns `None` when the point lies behind the camera (`z ≤ 1e-9`).
pub fn project(k: &CameraIntrinsics, cam_from_world: &Pose, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    k.project_camera_point(&cam_from_world.transform_point(x))
}

/// Projection together with its Jacobians.
#[derive(Clone, Debug)]
pub struct ProjectionJacobian {
    pub pixel: Vector2<f64>,
    /// With respect to a right perturbation `T · Exp(δ)` of the pose.
    pub d_pose: Matrix2x6<f64>,
    /// With respect to the world point.
    pub d_point: Matrix2x3<f64>,
}

pub fn project_with_jacobian(
    k: &CameraIntrinsics,
    cam_from_world: &Pose,
    x: &Vector3<f64>,
) -> Option<ProjectionJacobian> {
    let pc = cam_from_world.transform_point(x);
    let pixel = k.project_camera_point(&pc)?;
    let dpix = k.projection_jacobian(&pc);
    let r = cam_from_world.rotation_matrix();
    let mut d_pc = nalgebra::Matrix3x6::zeros();
    d_pc.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    d_pc.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * hat(x)));
    Some(ProjectionJacobian {
        pixel,
        d_pose: dpix * d_pc,
        d_point: dpix * r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3x4, UnitQuaternion, Vector4};

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100.0, 100.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let px = project(&k100(), &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
        let px = project(&k100(), &Pose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(100.0, 50.0));
    }

    #[test]
    fn behind_camera_is_flagged() {
        assert!(project(&k100(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project(&k100(), &Pose::identity(), &Vector3::new(1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn matches_projection_matrix() {
        let k = CameraIntrinsics::new(420.0, 410.0, 320.0, 240.0, 640.0, 480.0).unwrap();
        let t = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.3, 0.25),
            Vector3::new(0.4, -0.2, 1.5),
        );
        let x = Vector3::new(0.3, 0.7, 4.0);
        let m = t.to_matrix();
        let rt: Matrix3x4<f64> = m.fixed_view::<3, 4>(0, 0).into_owned();
        let h = k.matrix() * rt * Vector4::new(x.x, x.y, x.z, 1.0);
        let oracle = Vector2::new(h.x / h.z, h.y / h.z);
        assert_relative_eq!(project(&k, &t, &x).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 5.0, 5.0, 10.0, 10.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 15.0, 5.0, 10.0, 10.0).is_err());
    }
}
