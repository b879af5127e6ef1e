use nalgebra::{UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

use seqloc::eval::{ape, recall_curve, ApeSample};
use seqloc::geometry::{rotation_half_angle, Pose};
use seqloc::ingest::{diagonal_covariance, Descriptors};
use seqloc::matching::mutual_nearest_neighbors;
use seqloc::pgo::{build_graph, optimize, PgoConfig, PgoMode};
use seqloc::pose_estimation::{PoseEstimate, PoseStatus};
use seqloc::retrieval::top_k;
use seqloc::triangulation::select_neighbors;

fn tangent(t: f64, r: f64) -> impl Strategy<Value = Vector6<f64>> {
    (prop::array::uniform3(-t..t), prop::array::uniform3(-r..r))
        .prop_map(|(a, b)| Vector6::new(a[0], a[1], a[2], b[0], b[1], b[2]))
}

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform4(-1.0f64..1.0), prop::array::uniform3(-10.0f64..10.0))
        .prop_filter("non-degenerate quaternion", |(q, _)| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|(q, t)| {
            Pose::new(
                UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])),
                Vector3::from(t),
            )
        })
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.to_matrix() - b.to_matrix()).amax() <= tol
}

proptest! {
    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&((a * b) * c), &(a * (b * c)), 1e-12 * 30.0));
    }

    #[test]
    fn inverse_cancels(a in pose()) {
        prop_assert!(close(&(a * a.inverse()), &Pose::identity(), 1e-9));
        prop_assert!(close(&(a.inverse() * a), &Pose::identity(), 1e-9));
    }

    #[test]
    fn quaternions_stay_canonical(a in pose(), b in pose()) {
        let q = (a * b.inverse()).rotation().into_inner();
        prop_assert!(q.w >= 0.0);
        prop_assert!((q.norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn log_inverts_exp(xi in tangent(5.0, 1.7)) {
        prop_assume!(xi.fixed_rows::<3>(3).norm() <= 3.0);
        prop_assert!((Pose::exp(&xi).log() - xi).amax() <= 1e-9);
    }

    #[test]
    fn boxminus_inverts_boxplus(t in pose(), d in tangent(0.28, 0.28)) {
        prop_assume!(d.norm() < 0.5);
        prop_assert!((t.boxplus(&d).boxminus(&t).unwrap() - d).amax() <= 1e-9);
        prop_assert!(t.boxminus(&t).unwrap().amax() <= 1e-12);
    }

    #[test]
    fn half_angle_is_half_the_geodesic_angle(axis in prop::array::uniform3(-1.0f64..1.0), theta in 0.0..std::f64::consts::PI) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), theta);
        prop_assert!((rotation_half_angle(&q) - theta / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn neighbor_selection_ignores_global_frame(
        g in pose(),
        steps in prop::collection::vec(tangent(0.3, 0.15), 1..12),
        t_min in 0.05f64..0.6,
        theta_min_deg in 1.0f64..15.0,
    ) {
        let mut poses = vec![Pose::identity()];
        for s in &steps {
            poses.push(*poses.last().unwrap() * Pose::exp(s));
        }
        let moved: Vec<Pose> = poses.iter().map(|p| &g * p).collect();
        let theta = theta_min_deg.to_radians();
        let a = select_neighbors(&poses, t_min, theta);
        let b = select_neighbors(&moved, t_min, theta);
        // Thresholds exactly at the boundary may flip under rounding; random draws avoid them.
        prop_assert_eq!(a.clone(), b);
        for (i, n) in a.iter().enumerate() {
            if let Some(j) = n {
                prop_assert!(*j > i);
            }
        }
    }

    #[test]
    fn top_k_is_sorted_and_bounded(
        refs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..20),
        query in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..25,
    ) {
        let ids: Vec<String> = (0..refs.len()).map(|i| format!("r{i:02}")).collect();
        let view: Vec<(&str, &[f64])> = ids.iter().map(String::as_str).zip(refs.iter().map(Vec::as_slice)).collect();
        let set = top_k("q", &query, &view, k).unwrap();
        prop_assert_eq!(set.candidates.len(), k.min(refs.len()));
        for w in set.candidates.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn mutual_matching_is_symmetric(
        a in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 0..30),
        b in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 0..30),
        ratio in 0.5f64..1.0,
    ) {
        let unit = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.into_iter()
                .filter(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6)
                .map(|r| {
                    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    r.into_iter().map(|v| v / n).collect()
                })
                .collect()
        };
        let (a, b) = (Descriptors::from_rows(&unit(a)), Descriptors::from_rows(&unit(b)));
        let mut ab: Vec<(usize, usize)> = mutual_nearest_neighbors(&a, &b, ratio, 0.0).iter().map(|m| (m.idx_a, m.idx_b)).collect();
        let mut ba: Vec<(usize, usize)> = mutual_nearest_neighbors(&b, &a, ratio, 0.0).iter().map(|m| (m.idx_b, m.idx_a)).collect();
        ab.sort_unstable();
        ba.sort_unstable();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn recall_grows_with_thresholds(
        errs in prop::collection::vec(prop::option::of((0.0f64..1.0, 0.0f64..10.0)), 1..40),
        t in 0.0f64..1.0,
        r in 0.0f64..10.0,
        dt in 0.0f64..0.5,
        dr in 0.0f64..5.0,
    ) {
        let samples: Vec<ApeSample> = errs
            .into_iter()
            .enumerate()
            .map(|(i, e)| ApeSample { frame_id: i.to_string(), error: e, query_time_s: 0.0 })
            .collect();
        let c = recall_curve(&samples, &[(t, r), (t + dt, r), (t, r + dr), (t + dt, r + dr)]);
        prop_assert!(c[0] <= c[1] && c[0] <= c[2] && c[1] <= c[3] && c[2] <= c[3]);
    }

    #[test]
    fn ape_ignores_a_shared_world_transform(g in pose(), e in pose(), t in pose()) {
        let (t0, r0) = ape(&e, &t);
        let (t1, r1) = ape(&(g * e), &(g * t));
        prop_assert!((t0 - t1).abs() <= 1e-9 * t0.max(1.0));
        prop_assert!((r0 - r1).abs() <= 1e-6);
    }
}

fn estimates(poses: &[Pose], inliers: &[usize]) -> Vec<PoseEstimate> {
    poses
        .iter()
        .zip(inliers)
        .enumerate()
        .map(|(i, (p, &n))| PoseEstimate {
            frame_id: format!("f{i}"),
            pose: Some(*p),
            inlier_count: n,
            inlier_mask: Vec::new(),
            status: PoseStatus::Localized,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Moving every absolute estimate by the same world transform moves the
    /// optimized graph by that transform, in both modes.
    #[test]
    fn pose_graph_is_equivariant(
        g in pose(),
        steps in prop::collection::vec(tangent(0.3, 0.1), 2..7),
        noise in prop::collection::vec(tangent(0.05, 0.02), 7),
        inliers in prop::collection::vec(10usize..80, 7),
        literal in any::<bool>(),
    ) {
        let mut odo = vec![Pose::identity()];
        for s in &steps {
            odo.push(*odo.last().unwrap() * Pose::exp(s));
        }
        let n = odo.len();
        let est: Vec<Pose> = (0..n).map(|i| odo[i] * Pose::exp(&noise[i])).collect();
        let moved: Vec<Pose> = est.iter().map(|p| &g * p).collect();
        let cfg = PgoConfig {
            mode: if literal { PgoMode::PaperLiteral } else { PgoMode::PriorAugmented },
            ..PgoConfig::default()
        };
        let cov = diagonal_covariance(0.01, 0.5);
        let solve = |e: &[Pose]| {
            let graph = build_graph(&estimates(e, &inliers[..n]), &odo, &cov, &cfg).unwrap();
            optimize(&graph, cfg.max_iters, 1e-14).unwrap().0
        };
        let (a, b) = (solve(&est), solve(&moved));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(&(&g * x), y, 1e-6), "{:?} vs {:?}", &g * x, y);
        }
    }
}
