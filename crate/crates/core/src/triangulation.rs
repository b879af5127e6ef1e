//! Intra-sequence lifting: pick a parallax neighbor for each query rig,
//! triangulate matched keypoints in the odometry frame `q`, and pair the
//! lifted points with reference keypoints.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{project, project_with_jacobian, rotation_half_angle, CameraIntrinsics, Pose};
use crate::ingest::Frame;
use crate::matching::MatchSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriangulationConfig {
    /// Translation threshold for neighbor selection, meters.
    pub t_min: f64,
    /// Rotation threshold for neighbor selection (quaternion half-angle), degrees.
    pub theta_min_deg: f64,
    pub max_reproj_px: f64,
    /// Minimum angle between the two viewing rays, degrees.
    pub min_angle_deg: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            t_min: 0.3,
            theta_min_deg: 10.0,
            max_reproj_px: 3.0,
            min_angle_deg: 1.0,
        }
    }
}

/// `map[i] = Some(j)` with `j > i` the chosen neighbor of frame `i`.
pub type NeighborMap = Vec<Option<usize>>;

/// For each frame, the first later frame whose relative displacement reaches
/// `t_min` meters or whose relative rotation half-angle reaches `theta_min` radians.
pub fn select_neighbors(poses: &[Pose], t_min: f64, theta_min: f64) -> NeighborMap {
    let n = poses.len();
    let mut out = vec![None; n];
    for i in 0..n {
        let inv_i = poses[i].inverse();
        for j in i + 1..n {
            let rel = inv_i.compose(&poses[j]);
            if rel.translation().norm() >= t_min || rotation_half_angle(rel.rotation()) >= theta_min {
                out[i] = Some(j);
                break;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    DegenerateRays,
    BehindCamera,
    ReprojTooLarge,
    AngleTooSmall,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DegenerateRays => "degenerate_rays",
            Self::BehindCamera => "behind_camera",
            Self::ReprojTooLarge => "reproj_too_large",
            Self::AngleTooSmall => "angle_too_small",
        }
    }
}

/// A triangulated point with its reprojection errors in both views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulated {
    pub point: Vector3<f64>,
    pub reproj_px: [f64; 2],
}

/// Two-view triangulation from camera poses `T(q←cam)`.
///
/// Linear DLT on normalized coordinates, then one Gauss-Newton step on the
/// pixel reprojection error. Checks run in the order degenerate rays,
/// cheirality, reprojection, triangulation angle.
#[allow(clippy::too_many_arguments)]
pub fn triangulate_pair(
    ti: &Pose,
    tj: &Pose,
    ki: &CameraIntrinsics,
    kj: &CameraIntrinsics,
    xi: &Vector2<f64>,
    xj: &Vector2<f64>,
    max_reproj_px: f64,
    min_angle: f64,
) -> Result<Triangulated, RejectReason> {
    let baseline = tj.translation() - ti.translation();
    let ri = ti.rotation() * ki.bearing(xi);
    let rj = tj.rotation() * kj.bearing(xj);
    if baseline.norm() < 1e-9 || ri.cross(&rj).norm() < 1e-12 {
        return Err(RejectReason::DegenerateRays);
    }

    // Solve relative to the first camera center so distant scenes stay well conditioned.
    let origin = *ti.translation();
    let shift = Pose::from_translation(-origin);
    let (si, sj) = ((&shift * ti).inverse(), (&shift * tj).inverse());
    let mut a = Matrix4::zeros();
    for (row, (cam, x)) in [(&si, ki.normalized(xi)), (&sj, kj.normalized(xj))].into_iter().enumerate() {
        let p = cam.to_matrix();
        a.set_row(2 * row, &(x.x * p.row(2) - p.row(0)));
        a.set_row(2 * row + 1, &(x.y * p.row(2) - p.row(1)));
    }
    let h = smallest_right_singular_vector(&a);
    if h.w.abs() < 1e-12 * h.xyz().norm() {
        return Err(RejectReason::DegenerateRays);
    }
    let mut x = h.xyz() / h.w + origin;
    let (ci, cj) = (ti.inverse(), tj.inverse());
    if let Some(refined) = gauss_newton_step(&ci, &cj, ki, kj, xi, xj, &x) {
        x = refined;
    }

    let (pi, pj) = (ci.transform_point(&x), cj.transform_point(&x));
    if pi.z <= 0.0 || pj.z <= 0.0 {
        return Err(RejectReason::BehindCamera);
    }
    let ei = project(ki, &ci, &x).map(|p| (p - xi).norm());
    let ej = project(kj, &cj, &x).map(|p| (p - xj).norm());
    let (Some(ei), Some(ej)) = (ei, ej) else {
        return Err(RejectReason::BehindCamera);
    };
    if ei > max_reproj_px || ej > max_reproj_px {
        return Err(RejectReason::ReprojTooLarge);
    }
    let di = x - ti.translation();
    let dj = x - tj.translation();
    let angle = di.angle(&dj);
    if angle < min_angle {
        return Err(RejectReason::AngleTooSmall);
    }
    Ok(Triangulated {
        point: x,
        reproj_px: [ei, ej],
    })
}

fn smallest_right_singular_vector(a: &Matrix4<f64>) -> nalgebra::Vector4<f64> {
    // Eigenvector of AᵀA for the smallest eigenvalue; AᵀA is 4×4 symmetric.
    let eig = (a.transpose() * a).symmetric_eigen();
    let (k, _) = eig.eigenvalues.argmin();
    eig.eigenvectors.column(k).into_owned()
}

#[allow(clippy::too_many_arguments)]
fn gauss_newton_step(
    ci: &Pose,
    cj: &Pose,
    ki: &CameraIntrinsics,
    kj: &CameraIntrinsics,
    xi: &Vector2<f64>,
    xj: &Vector2<f64>,
    x: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let pi = project_with_jacobian(ki, ci, x)?;
    let pj = project_with_jacobian(kj, cj, x)?;
    let mut h = Matrix3::zeros();
    let mut g = Vector3::zeros();
    for (p, obs) in [(&pi, xi), (&pj, xj)] {
        let r = p.pixel - obs;
        h += p.d_point.transpose() * p.d_point;
        g += p.d_point.transpose() * r;
    }
    let step = h.cholesky()?.solve(&g);
    let out = x - step;
    out.iter().all(|v| v.is_finite()).then_some(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftedPoint {
    /// Keypoint index in the query frame.
    pub keypoint: usize,
    /// Point in the query odometry frame `q`.
    pub point: Vector3<f64>,
    /// Reprojection errors in the query frame and in its neighbor.
    pub reproj_px: [f64; 2],
}

/// Keypoints of one query image lifted to 3D.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LiftedKeypoints {
    pub frame_id: String,
    pub points: Vec<LiftedPoint>,
}

/// Per-reason rejection tallies from [`lift_frame`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RejectCounts {
    pub degenerate_rays: usize,
    pub behind_camera: usize,
    pub reproj_too_large: usize,
    pub angle_too_small: usize,
}

impl RejectCounts {
    fn add(&mut self, r: RejectReason) {
        match r {
            RejectReason::DegenerateRays => self.degenerate_rays += 1,
            RejectReason::BehindCamera => self.behind_camera += 1,
            RejectReason::ReprojTooLarge => self.reproj_too_large += 1,
            RejectReason::AngleTooSmall => self.angle_too_small += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.degenerate_rays + self.behind_camera + self.reproj_too_large + self.angle_too_small
    }
}

/// Triangulates every match between query image `a` (pose `T(q←a)`) and its
/// neighbor image `b` (pose `T(q←b)`).
pub fn lift_frame(
    a: &Frame,
    pose_a: &Pose,
    b: &Frame,
    pose_b: &Pose,
    matches: &MatchSet,
    cfg: &TriangulationConfig,
) -> (LiftedKeypoints, RejectCounts) {
    let mut lifted = LiftedKeypoints {
        frame_id: a.frame_id.clone(),
        points: Vec::with_capacity(matches.len()),
    };
    let mut rejects = RejectCounts::default();
    let min_angle = cfg.min_angle_deg.to_radians();
    for m in &matches.matches {
        match triangulate_pair(
            pose_a,
            pose_b,
            &a.intrinsics,
            &b.intrinsics,
            &a.keypoints[m.idx_a],
            &b.keypoints[m.idx_b],
            cfg.max_reproj_px,
            min_angle,
        ) {
            Ok(t) => lifted.points.push(LiftedPoint {
                keypoint: m.idx_a,
                point: t.point,
                reproj_px: t.reproj_px,
            }),
            Err(r) => rejects.add(r),
        }
    }
    (lifted, rejects)
}

/// A 3D point in `q` observed at `pixel` in reference `reference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corr {
    pub point: Vector3<f64>,
    /// Index into [`Corr3D2D::references`].
    pub reference: usize,
    pub pixel: Vector2<f64>,
}

/// 3D-2D correspondences of one query rig against its retrieved references.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corr3D2D {
    pub frame_id: String,
    /// Reference frame ids; `Corr::reference` indexes this list.
    pub references: Vec<String>,
    pub corrs: Vec<Corr>,
}

impl Corr3D2D {
    pub fn new(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.corrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrs.is_empty()
    }

    /// Index of `frame_id` in the reference list, appending it if new.
    pub fn reference_index(&mut self, frame_id: &str) -> usize {
        match self.references.iter().position(|r| r == frame_id) {
            Some(i) => i,
            None => {
                self.references.push(frame_id.to_owned());
                self.references.len() - 1
            }
        }
    }
}

/// Adds one correspondence per lifted keypoint matched into each reference.
/// `matches[j]` pairs the query image (side A) with `references[j]` (side B).
/// A keypoint matched into several references contributes once per reference.
pub fn assemble_3d2d(lifted: &LiftedKeypoints, references: &[&Frame], matches: &[MatchSet], out: &mut Corr3D2D) {
    for (reference, set) in references.iter().zip(matches) {
        let lookup = set.lookup();
        let r = out.reference_index(&reference.frame_id);
        for p in &lifted.points {
            if let Some(&kb) = lookup.get(&p.keypoint) {
                out.corrs.push(Corr {
                    point: p.point,
                    reference: r,
                    pixel: reference.keypoints[kb],
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Match;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    fn at(x: f64) -> Pose {
        Pose::from_translation(Vector3::new(x, 0.0, 0.0))
    }

    fn px(pose: &Pose, x: &Vector3<f64>) -> Vector2<f64> {
        project(&k(), &pose.inverse(), x).unwrap()
    }

    #[test]
    fn neighbors_translation_trace() {
        let poses = [at(0.0), at(0.1), at(0.4)];
        assert_eq!(select_neighbors(&poses, 0.3, 10f64.to_radians()), vec![Some(2), Some(2), None]);
        assert_eq!(select_neighbors(&[at(0.0), at(0.0)], 0.3, 0.1), vec![None, None]);
    }

    #[test]
    fn neighbors_rotation_half_angle() {
        let r = Pose::from_rotation(UnitQuaternion::from_euler_angles(0.0, 25f64.to_radians(), 0.0));
        let map = select_neighbors(&[Pose::identity(), r], 0.3, 10f64.to_radians());
        assert_eq!(map[0], Some(1));
        let r = Pose::from_rotation(UnitQuaternion::from_euler_angles(0.0, 19f64.to_radians(), 0.0));
        assert_eq!(select_neighbors(&[Pose::identity(), r], 0.3, 10f64.to_radians())[0], None);
    }

    #[test]
    fn triangulates_forward_projection() {
        let x = Vector3::new(0.5, 0.0, 5.0);
        let (a, b) = (at(0.0), at(1.0));
        let t = triangulate_pair(&a, &b, &k(), &k(), &px(&a, &x), &px(&b, &x), 3.0, 1f64.to_radians()).unwrap();
        assert_relative_eq!(t.point, x, epsilon = 1e-9);
        assert!(t.reproj_px[0] < 1e-9 && t.reproj_px[1] < 1e-9);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let x = Vector3::new(0.5, 0.0, 5.0);
        let a = at(0.0);
        let b = Pose::new(UnitQuaternion::from_euler_angles(0.0, 0.2, 0.0), Vector3::zeros());
        let r = triangulate_pair(&a, &b, &k(), &k(), &px(&a, &x), &px(&b, &x), 3.0, 0.01);
        assert_eq!(r, Err(RejectReason::DegenerateRays));
    }

    #[test]
    fn point_behind_both_cameras() {
        // Rays diverge forward, so the least-squares point lies behind.
        let (a, b) = (at(0.0), at(1.0));
        let r = triangulate_pair(
            &a,
            &b,
            &k(),
            &k(),
            &Vector2::new(300.0, 240.0),
            &Vector2::new(340.0, 240.0),
            3.0,
            0.0,
        );
        assert_eq!(r, Err(RejectReason::BehindCamera));
    }

    #[test]
    fn narrow_angle_rejected() {
        let x = Vector3::new(0.0, 0.0, 50.0);
        let (a, b) = (at(0.0), at(0.5));
        let r = triangulate_pair(&a, &b, &k(), &k(), &px(&a, &x), &px(&b, &x), 3.0, 1f64.to_radians());
        assert_eq!(r, Err(RejectReason::AngleTooSmall));
    }

    #[test]
    fn inconsistent_pixels_rejected() {
        let x = Vector3::new(0.0, 0.0, 5.0);
        let (a, b) = (at(0.0), at(0.3));
        let xi = px(&a, &x);
        let xj = px(&b, &x) + Vector2::new(0.0, 30.0);
        let r = triangulate_pair(&a, &b, &k(), &k(), &xi, &xj, 3.0, 0.0);
        assert_eq!(r, Err(RejectReason::ReprojTooLarge));
    }

    #[test]
    fn assemble_counts_union_with_duplicates() {
        let lifted = LiftedKeypoints {
            frame_id: "q".into(),
            points: (0..10)
                .map(|i| LiftedPoint {
                    keypoint: i,
                    point: Vector3::new(i as f64, 0.0, 1.0),
                    reproj_px: [0.0; 2],
                })
                .collect(),
        };
        let mut r1 = Frame::new("r1", "c", k());
        let mut r2 = Frame::new("r2", "c", k());
        r1.keypoints = vec![Vector2::new(1.0, 1.0); 20];
        r2.keypoints = vec![Vector2::new(2.0, 2.0); 20];
        let set = |ids: &[usize], b: &str| MatchSet {
            frame_a: "q".into(),
            frame_b: b.into(),
            matches: ids.iter().map(|&i| Match { idx_a: i, idx_b: i + 5, score: 1.0 }).collect(),
        };
        let m1 = set(&[0, 1, 2, 3, 4, 5], "r1");
        let m2 = set(&[4, 5, 6, 7], "r2");
        let mut out = Corr3D2D::new("q");
        assemble_3d2d(&lifted, &[&r1, &r2], &[m1.clone(), m2], &mut out);
        assert_eq!(out.len(), 10);
        assert_eq!(out.references, ["r1", "r2"]);
        assert_eq!(out.corrs.iter().filter(|c| c.reference == 1).count(), 4);

        let disjoint = set(&[15, 16], "r1");
        let mut empty = Corr3D2D::new("q");
        assemble_3d2d(&lifted, &[&r1], &[disjoint], &mut empty);
        assert!(empty.is_empty());
    }
}
