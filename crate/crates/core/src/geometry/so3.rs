//! Rotation-group helpers: hat operator, exponential/logarithm through unit
//! quaternions, and the left Jacobian with its inverse.
//!
//! All series switches are chosen so that the closed forms and their Taylor
//! expansions agree to well below 1e-15 at the switch point.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

const SMALL_ANGLE: f64 = 1e-2;
const SMALL_ANGLE_HIGH_ORDER: f64 = 1e-1;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[rustfmt::skip]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -v.z,  v.y,
         v.z,  0.0, -v.x,
        -v.y,  v.x,  0.0,
    )
}

/// Returns the same rotation with a non-negative scalar part.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Exponential map from a rotation vector.
pub fn exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let half = 0.5 * theta;
    let (real, imag_factor) = if theta < SMALL_ANGLE {
        (
            1.0 - theta_sq / 8.0 + theta_sq * theta_sq / 384.0,
            0.5 - theta_sq / 48.0 + theta_sq * theta_sq / 3840.0,
        )
    } else {
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::from_parts(real, phi * imag_factor);
    canonical(UnitQuaternion::new_normalize(q))
}

/// Logarithm map, returning a rotation vector with norm in `[0, π]`.
pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = canonical(*q);
    let imag = q.imag();
    let n = imag.norm();
    let w = q.w;
    // 2·atan2(n, w) / n, with w ≥ 0 after canonicalization.
    let factor = if n < 1e-8 {
        2.0 / w - 2.0 * n * n / (3.0 * w * w * w)
    } else {
        2.0 * n.atan2(w) / n
    };
    imag * factor
}

/// Geodesic rotation angle in `[0, π]`.
pub fn angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = canonical(*q);
    2.0 * q.imag().norm().atan2(q.w)
}

/// `(1 - cos θ) / θ²`
pub(crate) fn coef_a(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        let s = (0.5 * theta).sin();
        2.0 * s * s / (theta * theta)
    }
}

/// `(θ - sin θ) / θ³`
pub(crate) fn coef_b(theta: f64) -> f64 {
    if theta < SMALL_ANGLE_HIGH_ORDER {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362_880.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// `(1 - (θ/2)·cot(θ/2)) / θ²`, the quadratic coefficient of the inverse left Jacobian.
pub(crate) fn coef_inv(theta: f64) -> f64 {
    if theta < SMALL_ANGLE_HIGH_ORDER {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30_240.0 + t2 * t2 * t2 / 1_209_600.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    }
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() + coef_a(theta) * k + coef_b(theta) * k * k
}

pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() - 0.5 * k + coef_inv(theta) * k * k
}
