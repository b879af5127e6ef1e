//! Levenberg-Marquardt refinement of `T(r←q)` on robust pixel residuals.

use nalgebra::{Matrix2x6, Matrix6, Vector2, Vector6};

use super::RefCamera;
use crate::geometry::{project_with_jacobian, Pose};
use crate::robust::RobustKernel;
use crate::triangulation::Corr;

/// Costs below this are treated as an exact fit.
const ZERO_COST: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the cost settled.
    pub converged: bool,
}

/// Pixel residual `π(K, T(c←r)·T(r←q)·X) − x` and its Jacobian with respect
/// to a right perturbation of `T(r←q)`. `None` if the point is behind the camera.
pub fn reprojection_residual(
    cameras: &[RefCamera],
    ref_from_query: &Pose,
    corr: &Corr,
) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
    let cam = &cameras[corr.reference];
    let cam_from_query = cam.cam_from_ref.compose(ref_from_query);
    let p = project_with_jacobian(&cam.intrinsics, &cam_from_query, &corr.point)?;
    Some((p.pixel - corr.pixel, p.d_pose))
}

/// Robust cost over `subset`; infinite if any point falls behind its camera.
pub fn robust_cost(cameras: &[RefCamera], g: &Pose, corrs: &[Corr], subset: &[usize], kernel: &RobustKernel) -> f64 {
    let mut cost = 0.0;
    for &i in subset {
        let c = &corrs[i];
        let cam = &cameras[c.reference];
        match cam.intrinsics.project_camera_point(&cam.cam_from_ref.compose(g).transform_point(&c.point)) {
            Some(px) => cost += kernel.cost((px - c.pixel).norm_squared()),
            None => return f64::INFINITY,
        }
    }
    cost
}

/// Minimizes `Σ ρ(‖r‖²)` over the correspondences in `subset`, starting at `g0`.
/// The returned cost never exceeds the initial one.
pub fn refine_pose(
    g0: &Pose,
    cameras: &[RefCamera],
    corrs: &[Corr],
    subset: &[usize],
    kernel: &RobustKernel,
    max_iters: usize,
) -> (Pose, RefineReport) {
    let initial = robust_cost(cameras, g0, corrs, subset, kernel);
    let mut report = RefineReport {
        initial_cost: initial,
        final_cost: initial,
        iterations: 0,
        converged: true,
    };
    if subset.len() < 3 || !initial.is_finite() {
        report.converged = initial.is_finite();
        return (*g0, report);
    }
    let mut g = *g0;
    let mut cost = initial;
    let mut lambda = 1e-4;
    report.converged = false;
    while report.iterations < max_iters {
        if cost <= ZERO_COST {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let mut h = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for &i in subset {
            let Some((r, j)) = reprojection_residual(cameras, &g, &corrs[i]) else {
                continue;
            };
            let w = kernel.weight(r.norm_squared());
            h += w * j.transpose() * j;
            b += w * j.transpose() * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&b);
            let trial = g.boxplus(&delta);
            let trial_cost = robust_cost(cameras, &trial, corrs, subset, kernel);
            if trial_cost < cost {
                let decrease = cost - trial_cost;
                g = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if decrease <= 1e-12 * cost.max(ZERO_COST) || delta.norm() <= 1e-14 {
                    report.converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction improves the cost: a numerical minimum.
            report.converged = true;
        }
        if report.converged {
            break;
        }
    }
    if !report.converged {
        log::warn!("pose refinement stopped after {} iterations without converging", report.iterations);
    }
    report.final_cost = cost;
    (g, report)
}
