use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::IngestError;
use crate::geometry::Pose;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodeticPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GeodeticPoint {
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Self {
        Self {
            lat_deg,
            lon_deg,
            alt_m,
        }
    }

    fn check(&self) -> Result<(), IngestError> {
        if !(self.lat_deg.abs() <= 90.0 && self.lon_deg.abs() <= 180.0 && self.alt_m.is_finite()) {
            return Err(IngestError::OutOfRange(format!(
                "lat={}, lon={}, alt={}",
                self.lat_deg, self.lon_deg, self.alt_m
            )));
        }
        Ok(())
    }

    fn ecef(&self) -> Vector3<f64> {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let (slat, clat) = self.lat_deg.to_radians().sin_cos();
        let (slon, clon) = self.lon_deg.to_radians().sin_cos();
        let n = WGS84_A / (1.0 - e2 * slat * slat).sqrt();
        Vector3::new(
            (n + self.alt_m) * clat * clon,
            (n + self.alt_m) * clat * slon,
            (n * (1.0 - e2) + self.alt_m) * slat,
        )
    }
}

/// WGS-84 geodetic coordinates to East-North-Up meters about `origin`.
pub fn geodetic_to_local(point: GeodeticPoint, origin: GeodeticPoint) -> Result<Vector3<f64>, IngestError> {
    point.check()?;
    origin.check()?;
    let d = point.ecef() - origin.ecef();
    let (slat, clat) = origin.lat_deg.to_radians().sin_cos();
    let (slon, clon) = origin.lon_deg.to_radians().sin_cos();
    #[rustfmt::skip]
    let ecef_to_enu = Matrix3::new(
        -slon,         clon,        0.0,
        -slat * clon, -slat * slon, clat,
         clat * clon,  clat * slon, slat,
    );
    Ok(ecef_to_enu * d)
}

/// `T(enu←cam)` for a level camera at `position` looking along `heading_deg`
/// (clockwise from north).
pub fn heading_pose(position: Vector3<f64>, heading_deg: f64) -> Pose {
    let (s, c) = heading_deg.to_radians().sin_cos();
    let forward = Vector3::new(s, c, 0.0);
    let right = Vector3::new(c, -s, 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
    Pose::new(UnitQuaternion::from_rotation_matrix(&r), position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn origin_maps_to_zero() {
        let o = GeodeticPoint::new(47.3769, 8.5417, 408.0);
        assert_relative_eq!(geodetic_to_local(o, o).unwrap(), Vector3::zeros());
    }

    #[test]
    fn altitude_is_up() {
        let o = GeodeticPoint::new(47.3769, 8.5417, 408.0);
        let p = GeodeticPoint::new(47.3769, 8.5417, 418.0);
        assert_relative_eq!(geodetic_to_local(p, o).unwrap(), Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-6);
    }

    #[test]
    fn one_degree_north_at_equator() {
        let o = GeodeticPoint::new(0.0, 0.0, 0.0);
        let p = GeodeticPoint::new(1.0, 0.0, 0.0);
        let enu = geodetic_to_local(p, o).unwrap();
        // Closed form at an equatorial origin: north = N(φ)(1 − e²) sin φ, up = N(φ) cos φ − a.
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let phi = 1f64.to_radians();
        let n = WGS84_A / (1.0 - e2 * phi.sin().powi(2)).sqrt();
        assert_relative_eq!(enu.y, n * (1.0 - e2) * phi.sin(), epsilon = 1e-6);
        assert_relative_eq!(enu.z, n * phi.cos() - WGS84_A, epsilon = 1e-6);
        assert!(enu.x.abs() < 1e-9);
        // The tangent-plane chord is shorter than the 110574.4 m meridian arc.
        assert!((enu.y - 110_574.39).abs() < 6.0);
        assert!(enu.y < 110_574.39);
    }

    #[test]
    fn rejects_out_of_range() {
        let o = GeodeticPoint::new(0.0, 0.0, 0.0);
        assert!(geodetic_to_local(GeodeticPoint::new(91.0, 0.0, 0.0), o).is_err());
        assert!(geodetic_to_local(GeodeticPoint::new(0.0, 181.0, 0.0), o).is_err());
    }

    #[test]
    fn heading_north_looks_north() {
        let t = heading_pose(Vector3::zeros(), 0.0);
        let fwd = t.rotation() * Vector3::z();
        assert_relative_eq!(fwd, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let t = heading_pose(Vector3::zeros(), 90.0);
        assert_relative_eq!(t.rotation() * Vector3::z(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }
}
