//! Relative pose-graph refinement of a batch of global pose estimates.
//!
//! Nodes are `T(r←i)`. Odometry edges tie consecutive nodes to the relative
//! motion `(T(q←i+1))⁻¹·T(q←i)`; optional priors tie localized nodes to their
//! absolute estimates. One node is held fixed to remove the gauge freedom.

use nalgebra::{DMatrix, DVector, Matrix6};
use serde::{Deserialize, Serialize};

use crate::geometry::{se3_right_jacobian_inv, GeometryError, Pose, Tangent6};
use crate::pose_estimation::{PoseEstimate, PoseStatus};
use crate::robust::RobustKernel;

/// Costs below this count as an exact fit.
const ZERO_COST: f64 = 1e-28;
const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PgoMode {
    /// Odometry edges only.
    PaperLiteral,
    /// Odometry edges plus one prior per localized node, weighted by inlier count.
    #[default]
    PriorAugmented,
}

impl PgoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PaperLiteral => "paper_literal",
            Self::PriorAugmented => "prior_augmented",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    None,
    #[default]
    Huber,
    Tukey,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgoConfig {
    pub mode: PgoMode,
    pub kernel: KernelKind,
    /// Squared Mahalanobis distance at which the kernel leaves its quadratic region.
    pub kernel_threshold: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Odometry noise used when a sequence has no covariance.
    pub sigma_t_m: f64,
    pub sigma_r_deg: f64,
    /// Prior covariance is `prior_sigma_scale² · Σ / inlier_count`.
    pub prior_sigma_scale: f64,
    /// Hold the max-inlier node fixed even when priors already fix the gauge.
    /// Always on in `paper_literal` mode.
    pub fix_anchor: bool,
}

impl Default for PgoConfig {
    fn default() -> Self {
        Self {
            mode: PgoMode::PriorAugmented,
            kernel: KernelKind::Huber,
            kernel_threshold: 12.59,
            max_iters: 100,
            tol: 1e-9,
            sigma_t_m: crate::ingest::DEFAULT_ODOM_SIGMA_T_M,
            sigma_r_deg: crate::ingest::DEFAULT_ODOM_SIGMA_R_DEG,
            prior_sigma_scale: 20.0,
            fix_anchor: true,
        }
    }
}

impl PgoConfig {
    pub fn robust_kernel(&self) -> RobustKernel {
        let t = self.kernel_threshold.sqrt();
        match self.kernel {
            KernelKind::None => RobustKernel::None,
            KernelKind::Huber => RobustKernel::Huber { delta: t },
            KernelKind::Tukey => RobustKernel::Tukey { c: t },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PgoError {
    #[error("no localized frame in the batch")]
    NoLocalizedFrames,
    #[error("{estimates} estimates for {poses} odometry poses")]
    LengthMismatch { estimates: usize, poses: usize },
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Relative constraint between nodes `a` and `b = a + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// `(T(q←b))⁻¹·T(q←a)`
    pub measurement: Pose,
    /// Inverse covariance.
    pub information: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub node: usize,
    pub pose: Pose,
    pub information: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<Pose>,
    /// Node held constant; `None` leaves the gauge to the priors.
    pub fixed: Option<usize>,
    pub edges: Vec<Edge>,
    pub priors: Vec<Prior>,
    pub kernel: RobustKernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgoReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Robust weight of each edge and each prior at the solution.
    pub edge_weights: Vec<f64>,
    pub prior_weights: Vec<f64>,
}

fn information(cov: &Matrix6<f64>) -> Result<Matrix6<f64>, PgoError> {
    if !crate::ingest::is_spd(cov) {
        return Err(PgoError::NotSpd);
    }
    let inv = cov.cholesky().ok_or(PgoError::NotSpd)?.inverse();
    Ok((inv + inv.transpose()) * 0.5)
}

/// Builds the batch graph. `odometry[i]` is `T(q←i)` and `estimates[i]` the
/// PnP result for the same frame.
pub fn build_graph(
    estimates: &[PoseEstimate],
    odometry: &[Pose],
    covariance: &Matrix6<f64>,
    cfg: &PgoConfig,
) -> Result<PoseGraph, PgoError> {
    if estimates.len() != odometry.len() {
        return Err(PgoError::LengthMismatch {
            estimates: estimates.len(),
            poses: odometry.len(),
        });
    }
    let localized: Vec<usize> = (0..estimates.len())
        .filter(|&i| estimates[i].status == PoseStatus::Localized && estimates[i].pose.is_some())
        .collect();
    if localized.is_empty() {
        return Err(PgoError::NoLocalizedFrames);
    }
    let info = information(covariance)?;

    let nodes: Vec<Pose> = (0..odometry.len())
        .map(|i| {
            let l = *localized
                .iter()
                .min_by_key(|&&l| (l.abs_diff(i), l))
                .expect("non-empty");
            let est = estimates[l].pose.expect("localized");
            if l == i {
                est
            } else {
                est.compose(&odometry[l].inverse()).compose(&odometry[i])
            }
        })
        .collect();
    let best = localized
        .iter()
        .copied()
        .fold(localized[0], |b, i| if estimates[i].inlier_count > estimates[b].inlier_count { i } else { b });
    let fixed = (cfg.mode == PgoMode::PaperLiteral || cfg.fix_anchor).then_some(best);
    let edges = (0..odometry.len().saturating_sub(1))
        .map(|a| Edge {
            a,
            b: a + 1,
            measurement: odometry[a + 1].inverse().compose(&odometry[a]),
            information: info,
        })
        .collect();
    let priors = match cfg.mode {
        PgoMode::PaperLiteral => Vec::new(),
        PgoMode::PriorAugmented => {
            let s2 = cfg.prior_sigma_scale * cfg.prior_sigma_scale;
            localized
                .iter()
                .map(|&i| Prior {
                    node: i,
                    pose: estimates[i].pose.expect("localized"),
                    information: info * (estimates[i].inlier_count.max(1) as f64 / s2),
                })
                .collect()
        }
    };
    Ok(PoseGraph {
        nodes,
        fixed,
        edges,
        priors,
        kernel: cfg.robust_kernel(),
    })
}

/// `e = (Tb⁻¹·Ta) ⊟ Z`
pub fn edge_residual(edge: &Edge, ta: &Pose, tb: &Pose) -> Result<Tangent6, GeometryError> {
    tb.inverse().compose(ta).boxminus(&edge.measurement)
}

/// Residual and its Jacobians with respect to right perturbations of `Ta` and `Tb`.
pub fn edge_jacobians(
    edge: &Edge,
    ta: &Pose,
    tb: &Pose,
) -> Result<(Tangent6, Matrix6<f64>, Matrix6<f64>), GeometryError> {
    let e = edge_residual(edge, ta, tb)?;
    let jr_inv = se3_right_jacobian_inv(&e);
    let ja = jr_inv;
    let jb = -jr_inv * ta.inverse().compose(tb).adjoint();
    Ok((e, ja, jb))
}

/// `e = T ⊟ P` and its Jacobian with respect to a right perturbation of `T`.
pub fn prior_jacobian(prior: &Prior, t: &Pose) -> Result<(Tangent6, Matrix6<f64>), GeometryError> {
    let e = t.boxminus(&prior.pose)?;
    Ok((e, se3_right_jacobian_inv(&e)))
}

fn total_cost(graph: &PoseGraph, nodes: &[Pose]) -> Result<f64, GeometryError> {
    let mut cost = 0.0;
    for e in &graph.edges {
        let r = edge_residual(e, &nodes[e.a], &nodes[e.b])?;
        cost += graph.kernel.cost(r.dot(&(e.information * r)));
    }
    for p in &graph.priors {
        let r = nodes[p.node].boxminus(&p.pose)?;
        cost += graph.kernel.cost(r.dot(&(p.information * r)));
    }
    Ok(cost)
}

/// Column offset of `node` in the reduced system, or `None` for the fixed node.
fn slot(graph: &PoseGraph, node: usize) -> Option<usize> {
    use std::cmp::Ordering::*;
    let Some(fixed) = graph.fixed else {
        return Some(6 * node);
    };
    match node.cmp(&fixed) {
        Less => Some(6 * node),
        Equal => None,
        Greater => Some(6 * (node - 1)),
    }
}

fn free_nodes(graph: &PoseGraph) -> usize {
    graph.nodes.len() - usize::from(graph.fixed.is_some())
}

fn normal_equations(graph: &PoseGraph, nodes: &[Pose]) -> Result<(DMatrix<f64>, DVector<f64>), GeometryError> {
    let dim = 6 * free_nodes(graph);
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut add = |blocks: &[(Option<usize>, Matrix6<f64>)], r: &Tangent6, info: &Matrix6<f64>, w: f64| {
        for (si, ji) in blocks {
            let Some(si) = *si else { continue };
            let jt_info = ji.transpose() * info * w;
            let gi = jt_info * r;
            for k in 0..6 {
                g[si + k] += gi[k];
            }
            for (sj, jj) in blocks {
                let Some(sj) = *sj else { continue };
                let block = jt_info * jj;
                let mut view = h.view_mut((si, sj), (6, 6));
                view += block;
            }
        }
    };
    for e in &graph.edges {
        let (r, ja, jb) = edge_jacobians(e, &nodes[e.a], &nodes[e.b])?;
        let w = graph.kernel.weight(r.dot(&(e.information * r)));
        add(&[(slot(graph, e.a), ja), (slot(graph, e.b), jb)], &r, &e.information, w);
    }
    for p in &graph.priors {
        let (r, j) = prior_jacobian(p, &nodes[p.node])?;
        let w = graph.kernel.weight(r.dot(&(p.information * r)));
        add(&[(slot(graph, p.node), j)], &r, &p.information, w);
    }
    Ok((h, g))
}

/// Levenberg-Marquardt over all nodes but the fixed one, if any.
pub fn optimize(graph: &PoseGraph, max_iters: usize, tol: f64) -> Result<(Vec<Pose>, PgoReport), PgoError> {
    let mut nodes = graph.nodes.clone();
    let initial = total_cost(graph, &nodes)?;
    let mut report = PgoReport {
        iterations: 0,
        initial_cost: initial,
        final_cost: initial,
        converged: true,
        edge_weights: Vec::new(),
        prior_weights: Vec::new(),
    };
    let mut cost = initial;
    if free_nodes(graph) > 0 && cost > ZERO_COST {
        report.converged = false;
        let mut lambda = LAMBDA_INIT;
        while report.iterations < max_iters {
            report.iterations += 1;
            let (h, g) = normal_equations(graph, &nodes)?;
            let mut stepped = false;
            let mut factorized = false;
            while lambda <= LAMBDA_MAX {
                let mut damped = h.clone();
                for k in 0..damped.nrows() {
                    damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                factorized = true;
                let delta = -chol.solve(&g);
                let trial: Vec<Pose> = nodes
                    .iter()
                    .enumerate()
                    .map(|(i, t)| match slot(graph, i) {
                        Some(s) => t.boxplus(&delta.fixed_rows::<6>(s).into_owned()),
                        None => *t,
                    })
                    .collect();
                let trial_cost = total_cost(graph, &trial).unwrap_or(f64::INFINITY);
                if trial_cost < cost {
                    let rel = (cost - trial_cost) / cost;
                    nodes = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.1).max(1e-12);
                    stepped = true;
                    if rel < tol || cost <= ZERO_COST || delta.amax() <= 1e-15 {
                        report.converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !stepped {
                // Either no damping made the system solvable, or no step lowers the cost.
                report.converged = factorized;
                if !factorized {
                    log::warn!("pose graph normal equations stayed singular under damping");
                }
                break;
            }
            if report.converged {
                break;
            }
        }
    }
    report.final_cost = cost;
    for e in &graph.edges {
        let r = edge_residual(e, &nodes[e.a], &nodes[e.b])?;
        report.edge_weights.push(graph.kernel.weight(r.dot(&(e.information * r))));
    }
    for p in &graph.priors {
        let r = nodes[p.node].boxminus(&p.pose)?;
        report.prior_weights.push(graph.kernel.weight(r.dot(&(p.information * r))));
    }
    Ok((nodes, report))
}
