use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dlt::dlt_pose;
use super::p3p::p3p;
use super::refine::refine_pose;
use super::{PnpConfig, RefCamera, REFINE_HUBER_PX, REFINE_MAX_ITERS};
use crate::geometry::Pose;
use crate::robust::RobustKernel;
use crate::triangulation::Corr;

/// Consecutive degenerate samples before the linear fallback is tried.
const DEGENERATE_RUN: usize = 100;
const LO_REPEATS: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct Hypothesis {
    pub pose: Pose,
    pub mask: Vec<bool>,
    pub count: usize,
    pub rms: f64,
}

impl Hypothesis {
    fn beats(&self, other: &Hypothesis) -> bool {
        self.count > other.count || (self.count == other.count && self.rms < other.rms)
    }

    fn inliers(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

pub(crate) fn score(cameras: &[RefCamera], corrs: &[Corr], g: &Pose, thresh_px: f64) -> Hypothesis {
    let mut mask = vec![false; corrs.len()];
    let mut count = 0;
    let mut sq = 0.0;
    let poses: Vec<Pose> = cameras.iter().map(|c| c.cam_from_ref.compose(g)).collect();
    for (c, m) in corrs.iter().zip(mask.iter_mut()) {
        let cam = &cameras[c.reference];
        if let Some(px) = cam.intrinsics.project_camera_point(&poses[c.reference].transform_point(&c.point)) {
            let e2 = (px - c.pixel).norm_squared();
            if e2 <= thresh_px * thresh_px {
                *m = true;
                count += 1;
                sq += e2;
            }
        }
    }
    let rms = if count > 0 { (sq / count as f64).sqrt() } else { f64::INFINITY };
    Hypothesis {
        pose: *g,
        mask,
        count,
        rms,
    }
}

pub(crate) struct RansacRun {
    pub best: Option<Hypothesis>,
    pub iterations: usize,
    pub best_counts: Vec<usize>,
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p = inlier_ratio.powi(3);
    if p >= 1.0 - 1e-12 {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Local optimization: refine on the current inliers while the count grows.
fn local_optimize(cameras: &[RefCamera], corrs: &[Corr], start: Hypothesis, cfg: &PnpConfig) -> Hypothesis {
    let kernel = RobustKernel::Huber { delta: REFINE_HUBER_PX };
    let mut best = start;
    for _ in 0..LO_REPEATS {
        let (g, _) = refine_pose(&best.pose, cameras, corrs, &best.inliers(), &kernel, REFINE_MAX_ITERS);
        let h = score(cameras, corrs, &g, cfg.thresh_px);
        let grew = h.count > best.count;
        if h.beats(&best) {
            best = h;
        }
        if !grew {
            break;
        }
    }
    best
}

pub(crate) fn run(cameras: &[RefCamera], corrs: &[Corr], cfg: &PnpConfig, seed: u64) -> RansacRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_camera = vec![0usize; cameras.len()];
    for c in corrs {
        per_camera[c.reference] += 1;
    }
    // Minimal samples come from the reference camera with the most correspondences.
    let dominant = (0..cameras.len()).fold(0, |b, i| if per_camera[i] > per_camera[b] { i } else { b });
    let pool: Vec<usize> = (0..corrs.len()).filter(|&i| corrs[i].reference == dominant).collect();
    let mut out = RansacRun {
        best: None,
        iterations: 0,
        best_counts: Vec::new(),
    };
    if pool.len() < 3 {
        return out;
    }
    let cam = &cameras[dominant];
    let ref_from_cam = cam.cam_from_ref.inverse();

    let mut needed = cfg.max_iters;
    let mut degenerate_run = 0;
    let mut dlt_tried = false;
    while out.iterations < needed.min(cfg.max_iters) {
        out.iterations += 1;
        let sample = index::sample(&mut rng, pool.len(), 3);
        let ids = [pool[sample.index(0)], pool[sample.index(1)], pool[sample.index(2)]];
        let points = ids.map(|i| corrs[i].point);
        let pixels = ids.map(|i| corrs[i].pixel);
        let mut models: Vec<Pose> = p3p(&cam.intrinsics, &points, &pixels)
            .iter()
            .map(|s| ref_from_cam.compose(s))
            .collect();
        if models.is_empty() {
            degenerate_run += 1;
            if degenerate_run >= DEGENERATE_RUN && !dlt_tried && pool.len() >= 6 {
                dlt_tried = true;
                let pts: Vec<_> = pool.iter().map(|&i| corrs[i].point).collect();
                let pxs: Vec<_> = pool.iter().map(|&i| corrs[i].pixel).collect();
                if let Some(s) = dlt_pose(&cam.intrinsics, &pts, &pxs) {
                    models.push(ref_from_cam.compose(&s));
                }
            }
        } else {
            degenerate_run = 0;
        }
        for g in models {
            let h = score(cameras, corrs, &g, cfg.thresh_px);
            if h.count < 3 || out.best.as_ref().is_some_and(|b| !h.beats(b)) {
                continue;
            }
            let h = local_optimize(cameras, corrs, h, cfg);
            let in_pool = pool.iter().filter(|&&i| h.mask[i]).count();
            needed = required_iterations(in_pool as f64 / pool.len() as f64, cfg.confidence, cfg.max_iters);
            out.best = Some(h);
        }
        out.best_counts.push(out.best.as_ref().map_or(0, |b| b.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_bound() {
        assert_eq!(required_iterations(1.0, 0.9999, 10_000), 1);
        assert_eq!(required_iterations(0.0, 0.9999, 10_000), 10_000);
        // 0.5³ = 1/8: ln(1e-4)/ln(7/8) = 68.97
        assert_eq!(required_iterations(0.5, 0.9999, 10_000), 69);
        assert_eq!(required_iterations(0.5, 0.9999, 20), 20);
    }
}
