use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Point3, Quaternion, UnitQuaternion, Vector3, Vector6};

use super::so3;
use super::GeometryError;

/// Tangent-space coordinates `[ρ, φ]`: translational part first (meters),
/// rotational part second (radians).
pub type Tangent6 = Vector6<f64>;

/// Relative rotations closer than this to π have no unique logarithm.
pub const LOG_SINGULARITY_MARGIN: f64 = 1e-6;

/// A rigid transform `T(i←j)`: it maps coordinates of a point expressed in
/// frame `j` into frame `i`.
///
/// The rotation is stored as a unit quaternion kept in canonical form
/// (non-negative scalar part) so that serialization is unambiguous.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation;
        let t = self.translation;
        write!(
            f,
            "Pose(q=[{}, {}, {}, {}], t=[{}, {}, {}])",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let rotation = so3::canonical(renormalize(rotation.into_inner()));
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a pose from the 7-number record `qw, qx, qy, qz, tx, ty, tz`.
    ///
    /// The quaternion is normalized; a (near-)zero or non-finite quaternion is rejected.
    pub fn from_record(r: [f64; 7]) -> Result<Self, GeometryError> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let q = Quaternion::new(r[0], r[1], r[2], r[3]);
        if q.norm() < 1e-12 {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self::new(
            UnitQuaternion::new_unchecked(q),
            Vector3::new(r[4], r[5], r[6]),
        ))
    }

    /// Inverse of [`Pose::from_record`]: `qw, qx, qy, qz, tx, ty, tz`.
    pub fn to_record(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// 4×4 homogeneous matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `T(i←j) · T(j←k) = T(i←k)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }

    /// Geodesic rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        so3::angle(&self.rotation)
    }

    /// Exponential map of `[ρ, φ]`.
    pub fn exp(xi: &Tangent6) -> Pose {
        let rho = xi.fixed_rows::<3>(0).into_owned();
        let phi = xi.fixed_rows::<3>(3).into_owned();
        let v = so3::left_jacobian(&phi);
        Pose::new(so3::exp(&phi), v * rho)
    }

    /// Logarithm map. Unique only while the rotation angle stays below π.
    pub fn log(&self) -> Tangent6 {
        let phi = so3::log(&self.rotation);
        let rho = so3::left_jacobian_inv(&phi) * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    /// Right-multiplicative retraction `T · Exp(δ)`.
    pub fn boxplus(&self, delta: &Tangent6) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Local difference `Log(b⁻¹ · a)`, so that `b.boxplus(a.boxminus(b)) == a`.
    pub fn boxminus(&self, b: &Pose) -> Result<Tangent6, GeometryError> {
        let rel = b.inverse().compose(self);
        let angle = rel.rotation_angle();
        if angle > std::f64::consts::PI - LOG_SINGULARITY_MARGIN {
            return Err(GeometryError::NearPiRotation { angle });
        }
        Ok(rel.log())
    }

    /// Adjoint in the `[ρ, φ]` ordering: `T · Exp(x) · T⁻¹ = Exp(Ad_T x)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(so3::hat(&self.translation) * r));
        ad
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Normalizes unless already unit to within rounding, so that stored poses
/// reload bit-identically.
fn renormalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let n2 = q.norm_squared();
    if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_unchecked(q / n2.sqrt())
    }
}

/// Half of the geodesic rotation angle: `atan2(‖(x, y, z)‖₂, |w|)`, in `[0, π/2]`.
///
/// This is the quantity the neighbor-selection test compares against its
/// rotation threshold, so a threshold of 10° admits 20° relative rotations.
pub fn rotation_half_angle(q: &UnitQuaternion<f64>) -> f64 {
    q.imag().norm().atan2(q.w.abs())
}

fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (c1, c2, c3) = if theta < 0.1 {
        let t2 = theta * theta;
        (
            so3::coef_b(theta),
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40_320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120_960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            so3::coef_b(theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let p = so3::hat(phi);
    let r = so3::hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) + c3 * (prp * p + p * prp)
}

/// Left Jacobian of SE(3) in the `[ρ, φ]` ordering.
pub fn se3_left_jacobian(xi: &Tangent6) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let j = so3::left_jacobian(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&q_block(&rho, &phi));
    out
}

pub fn se3_left_jacobian_inv(xi: &Tangent6) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let j_inv = so3::left_jacobian_inv(&phi);
    let q = q_block(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

/// Inverse right Jacobian: `Log(Exp(ξ)·Exp(δ)) ≈ ξ + Jr⁻¹(ξ)·δ`.
pub fn se3_right_jacobian_inv(xi: &Tangent6) -> Matrix6<f64> {
    se3_left_jacobian_inv(&(-xi))
}
