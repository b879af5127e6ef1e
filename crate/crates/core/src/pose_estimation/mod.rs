//! Absolute pose of each query frame from its 3D-2D correspondences.
//!
//! The lifted points live in the odometry frame `q` and are observed by posed
//! reference cameras, so the unknown is the alignment `T(r←q)`. A frame's
//! global pose follows as `T(r←i) = T(r←q)·T(q←i)`.

pub mod dlt;
pub mod p3p;
mod ransac;
pub mod refine;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pose};
use crate::ingest::Frame;
use crate::robust::RobustKernel;
use crate::triangulation::Corr;

pub use dlt::dlt_pose;
pub use p3p::{p3p, p3p_bearings};
pub use refine::{refine_pose, reprojection_residual, RefineReport};

/// Huber threshold for pose refinement, pixels.
pub const REFINE_HUBER_PX: f64 = 2.0;
pub const REFINE_MAX_ITERS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpConfig {
    pub min_inliers: usize,
    pub thresh_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            min_inliers: 10,
            thresh_px: 3.0,
            max_iters: 10_000,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

/// A posed reference camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefCamera {
    pub intrinsics: CameraIntrinsics,
    /// `T(c←r)`
    pub cam_from_ref: Pose,
}

impl RefCamera {
    /// From a reference frame carrying `T(r←c)`.
    pub fn from_frame(frame: &Frame) -> Option<Self> {
        Some(Self {
            intrinsics: frame.intrinsics,
            cam_from_ref: frame.pose?.inverse(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseStatus {
    Localized,
    RejectedFewInliers,
    SkippedNoNeighbor,
    SkippedNoMatches,
}

impl PoseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Localized => "localized",
            Self::RejectedFewInliers => "rejected_few_inliers",
            Self::SkippedNoNeighbor => "skipped_no_neighbor",
            Self::SkippedNoMatches => "skipped_no_matches",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Localized,
            Self::RejectedFewInliers,
            Self::SkippedNoNeighbor,
            Self::SkippedNoMatches,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub frame_id: String,
    /// `T(r←i)`; present only when localized.
    pub pose: Option<Pose>,
    pub inlier_count: usize,
    pub inlier_mask: Vec<bool>,
    pub status: PoseStatus,
}

impl PoseEstimate {
    pub fn skipped(frame_id: &str, status: PoseStatus, n_corrs: usize) -> Self {
        Self {
            frame_id: frame_id.to_owned(),
            pose: None,
            inlier_count: 0,
            inlier_mask: vec![false; n_corrs],
            status,
        }
    }
}

/// Diagnostics from one robust estimation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RansacTrace {
    /// Best `T(r←q)` found, even when the inlier gate rejected it.
    pub alignment: Option<Pose>,
    pub iterations: usize,
    /// Best inlier count after each iteration.
    pub best_counts: Vec<usize>,
    pub refine: Option<RefineReport>,
}

/// LO-RANSAC over P3P hypotheses followed by robust refinement and inlier gating.
///
/// `query_from_frame` is `T(q←i)`, used to express the result as `T(r←i)`.
pub fn lo_ransac_pnp(
    frame_id: &str,
    query_from_frame: &Pose,
    cameras: &[RefCamera],
    corrs: &[Corr],
    cfg: &PnpConfig,
    seed: u64,
) -> (PoseEstimate, RansacTrace) {
    let mut trace = RansacTrace::default();
    if corrs.len() < 3 {
        return (PoseEstimate::skipped(frame_id, PoseStatus::SkippedNoMatches, corrs.len()), trace);
    }
    let run = ransac::run(cameras, corrs, cfg, seed);
    trace.iterations = run.iterations;
    trace.best_counts = run.best_counts;
    let Some(best) = run.best else {
        return (
            PoseEstimate::skipped(frame_id, PoseStatus::RejectedFewInliers, corrs.len()),
            trace,
        );
    };

    let inliers: Vec<usize> = (0..corrs.len()).filter(|&i| best.mask[i]).collect();
    let kernel = RobustKernel::Huber { delta: REFINE_HUBER_PX };
    let (g, report) = refine_pose(&best.pose, cameras, corrs, &inliers, &kernel, REFINE_MAX_ITERS);
    trace.refine = Some(report);
    let refined = ransac::score(cameras, corrs, &g, cfg.thresh_px);
    let final_model = if refined.count >= best.count { refined } else { best };
    trace.alignment = Some(final_model.pose);

    let localized = final_model.count >= cfg.min_inliers;
    let estimate = PoseEstimate {
        frame_id: frame_id.to_owned(),
        pose: localized.then(|| final_model.pose.compose(query_from_frame)),
        inlier_count: final_model.count,
        inlier_mask: final_model.mask,
        status: if localized {
            PoseStatus::Localized
        } else {
            PoseStatus::RejectedFewInliers
        },
    };
    (estimate, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    struct Scene {
        cameras: Vec<RefCamera>,
        corrs: Vec<Corr>,
        truth: Pose,
        mask: Vec<bool>,
    }

    /// `n` points seen by one reference camera, a fraction rewired to wrong pixels.
    fn scene(seed: u64, n: usize, outlier_rate: f64, noise_px: f64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = Pose::new(
            UnitQuaternion::from_euler_angles(0.2, -0.4, 1.1),
            Vector3::new(3.0, -1.0, 0.5),
        );
        let cam_pose = Pose::new(UnitQuaternion::from_euler_angles(0.05, 0.1, -0.2), Vector3::new(1.0, 2.0, 0.0));
        let cameras = vec![RefCamera {
            intrinsics: k(),
            cam_from_ref: cam_pose.inverse(),
        }];
        let cam_from_query = cameras[0].cam_from_ref.compose(&truth);
        let query_from_cam = cam_from_query.inverse();
        let mut corrs = Vec::new();
        let mut mask = Vec::new();
        let normal = rand_distr::Normal::new(0.0, noise_px.max(1e-300)).unwrap();
        for _ in 0..n {
            let pc = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..9.0));
            let mut pixel = k().project_camera_point(&pc).unwrap();
            if noise_px > 0.0 {
                pixel += Vector2::new(rng.sample(normal), rng.sample(normal));
            }
            let inlier = rng.random::<f64>() >= outlier_rate;
            if !inlier {
                pixel = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            }
            corrs.push(Corr {
                point: query_from_cam.transform_point(&pc),
                reference: 0,
                pixel,
            });
            mask.push(inlier);
        }
        Scene {
            cameras,
            corrs,
            truth,
            mask,
        }
    }

    #[test]
    fn clean_correspondences_recover_truth() {
        let s = scene(1, 20, 0.0, 0.0);
        let (est, _) = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &PnpConfig::default(), 7);
        assert_eq!(est.status, PoseStatus::Localized);
        assert_eq!(est.inlier_count, 20);
        let p = est.pose.unwrap();
        assert_relative_eq!(p.translation(), s.truth.translation(), epsilon = 1e-6);
        assert!(p.rotation().angle_to(s.truth.rotation()) < 1e-6);
    }

    #[test]
    fn outliers_are_identified() {
        let s = scene(2, 60, 0.3, 0.0);
        let (est, trace) = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &PnpConfig::default(), 3);
        assert_eq!(est.inlier_mask, s.mask);
        assert_relative_eq!(est.pose.unwrap().translation(), s.truth.translation(), epsilon = 1e-6);
        assert!(trace.best_counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn deterministic_for_seed() {
        let s = scene(4, 50, 0.4, 1.0);
        let cfg = PnpConfig::default();
        let a = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &cfg, 11);
        let b = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &cfg, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_correspondences() {
        let s = scene(5, 2, 0.0, 0.0);
        let (est, _) = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &PnpConfig::default(), 0);
        assert_eq!(est.status, PoseStatus::SkippedNoMatches);
        let s = scene(5, 8, 0.0, 0.0);
        let (est, _) = lo_ransac_pnp("q", &Pose::identity(), &s.cameras, &s.corrs, &PnpConfig::default(), 0);
        assert_eq!(est.status, PoseStatus::RejectedFewInliers);
        assert!(est.pose.is_none());
        assert_eq!(est.inlier_count, 8);
    }

    #[test]
    fn refine_from_truth_is_stationary() {
        let s = scene(6, 30, 0.0, 0.0);
        let all: Vec<usize> = (0..30).collect();
        let kernel = RobustKernel::Huber { delta: REFINE_HUBER_PX };
        let (g, rep) = refine_pose(&s.truth, &s.cameras, &s.corrs, &all, &kernel, 50);
        assert_relative_eq!(g.translation(), s.truth.translation(), epsilon = 1e-10);
        assert!(g.rotation().angle_to(s.truth.rotation()) < 1e-10);
        assert!(rep.final_cost <= rep.initial_cost);
    }

    #[test]
    fn refine_recovers_from_perturbation() {
        let s = scene(7, 30, 0.0, 0.0);
        let all: Vec<usize> = (0..30).collect();
        let delta = nalgebra::Vector6::new(0.03, -0.03, 0.03, 0.02, -0.02, 0.015);
        let start = s.truth.boxplus(&delta);
        let kernel = RobustKernel::Huber { delta: REFINE_HUBER_PX };
        let (g, rep) = refine_pose(&start, &s.cameras, &s.corrs, &all, &kernel, 50);
        assert!(rep.converged);
        assert!(rep.final_cost < rep.initial_cost);
        assert_relative_eq!(g.translation(), s.truth.translation(), epsilon = 1e-8);
        assert!(g.rotation().angle_to(s.truth.rotation()) < 1e-8);
    }

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let s = scene(8, 5, 0.0, 0.0);
        let g = s.truth.boxplus(&nalgebra::Vector6::new(0.01, 0.02, -0.01, 0.01, 0.0, -0.02));
        for c in &s.corrs {
            let (_, j) = reprojection_residual(&s.cameras, &g, c).unwrap();
            for k in 0..6 {
                let mut d = nalgebra::Vector6::zeros();
                d[k] = 1e-6;
                let (rp, _) = reprojection_residual(&s.cameras, &g.boxplus(&d), c).unwrap();
                let (rm, _) = reprojection_residual(&s.cameras, &g.boxplus(&-d), c).unwrap();
                let fd = (rp - rm) / 2e-6;
                assert!((fd - j.column(k)).norm() <= 1e-4 * fd.norm().max(1.0));
            }
        }
    }
}
