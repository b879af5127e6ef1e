//! Linear n-point absolute pose, used when minimal sampling keeps degenerating.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::geometry::{CameraIntrinsics, Pose};

/// `T(cam←world)` from six or more correspondences, or `None` if the
/// configuration is degenerate.
pub fn dlt_pose(k: &CameraIntrinsics, points: &[Vector3<f64>], pixels: &[Vector2<f64>]) -> Option<Pose> {
    let n = points.len();
    if n < 6 || pixels.len() != n {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
    if spread <= 0.0 {
        return None;
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, px)) in points.iter().zip(pixels).enumerate() {
        let xn = (x - centroid) / spread;
        let h = [xn.x, xn.y, xn.z, 1.0];
        let m = k.normalized(px);
        for c in 0..4 {
            a[(2 * i, c)] = h[c];
            a[(2 * i, 8 + c)] = -m.x * h[c];
            a[(2 * i + 1, 4 + c)] = h[c];
            a[(2 * i + 1, 8 + c)] = -m.y * h[c];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(idx);
    let mut p = Matrix3x4::from_fn(|r, c| v[4 * r + c]);

    // Undo the point normalization: P = [M/σ | p − M·c/σ].
    let m = p.fixed_view::<3, 3>(0, 0) / spread;
    let col = p.column(3) - m * centroid;
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    p.set_column(3, &col);

    let depth = (p * centroid.push(1.0)).z;
    if depth < 0.0 {
        p = -p;
    }
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut r = u * vt;
    let scale = svd.singular_values.mean();
    if r.determinant() < 0.0 || scale <= 0.0 {
        return None;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    r = Rotation3::from_matrix(&r).into_inner();
    let t = p.column(3) / scale;
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Some(Pose::new(q, t))
}
