//! Absolute pose error, recall curves and summary statistics.

use std::collections::HashMap;
use std::path::Path;

use crate::geometry::Pose;
use crate::ingest::io::{fmt_f64, CsvOut};
use crate::ingest::IngestError;

/// Translation thresholds of the default recall grid, meters.
pub const RECALL_T_M: [f64; 8] = [0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 5.0];
/// Rotation thresholds of the default recall grid, degrees.
pub const RECALL_R_DEG: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq)]
pub struct ApeSample {
    pub frame_id: String,
    /// `(meters, degrees)`; `None` for frames that were not localized.
    pub error: Option<(f64, f64)>,
    pub query_time_s: f64,
}

impl ApeSample {
    pub fn localized(&self) -> bool {
        self.error.is_some()
    }
}

/// Translation distance and geodesic rotation angle (degrees) between two poses.
pub fn ape(est: &Pose, gt: &Pose) -> (f64, f64) {
    let t = (est.translation() - gt.translation()).norm();
    let r = crate::geometry::so3::angle(&(est.rotation() * gt.rotation().inverse())).to_degrees();
    (t, r.clamp(0.0, 180.0))
}

/// Every `(t, r)` pair of the default threshold axes.
pub fn default_thresholds() -> Vec<(f64, f64)> {
    RECALL_T_M
        .iter()
        .flat_map(|&t| RECALL_R_DEG.iter().map(move |&r| (t, r)))
        .collect()
}

/// Fraction of all samples within each `(meters, degrees)` threshold;
/// unlocalized samples always count as failures.
pub fn recall_curve(samples: &[ApeSample], thresholds: &[(f64, f64)]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&(tt, tr)| {
            if samples.is_empty() {
                return 0.0;
            }
            let hits = samples
                .iter()
                .filter(|s| s.error.is_some_and(|(t, r)| t <= tt && r <= tr))
                .count();
            hits as f64 / samples.len() as f64
        })
        .collect()
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub n_frames: usize,
    pub n_localized: usize,
    /// Medians over localized frames only.
    pub median_trans_m: Option<f64>,
    pub median_rot_deg: Option<f64>,
    pub pct_localized: f64,
    pub mean_query_time_s: Option<f64>,
}

pub fn summarize(samples: &[ApeSample]) -> Summary {
    let errs: Vec<(f64, f64)> = samples.iter().filter_map(|s| s.error).collect();
    let trans: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let rot: Vec<f64> = errs.iter().map(|e| e.1).collect();
    let pct = if samples.is_empty() {
        0.0
    } else {
        100.0 * errs.len() as f64 / samples.len() as f64
    };
    Summary {
        n_frames: samples.len(),
        n_localized: errs.len(),
        median_trans_m: median(&trans),
        median_rot_deg: median(&rot),
        pct_localized: pct,
        mean_query_time_s: (!samples.is_empty())
            .then(|| samples.iter().map(|s| s.query_time_s).sum::<f64>() / samples.len() as f64),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("estimated frame `{0}` has no ground truth")]
    UnknownFrame(String),
    #[error("no estimated frame overlaps the ground truth")]
    NoOverlap,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Pairs estimates with ground truth. Ground-truth frames without an estimate
/// count as unlocalized; estimates for unknown frames are an error.
pub fn compare(
    estimates: &[(String, Option<Pose>)],
    truth: &[(String, Pose)],
    query_time_s: &HashMap<String, f64>,
) -> Result<Vec<ApeSample>, EvalError> {
    let est: HashMap<&str, Option<&Pose>> = estimates.iter().map(|(id, p)| (id.as_str(), p.as_ref())).collect();
    if let Some((id, _)) = estimates.iter().find(|(id, _)| !truth.iter().any(|(t, _)| t == id)) {
        return Err(EvalError::UnknownFrame(id.clone()));
    }
    if !truth.iter().any(|(id, _)| est.contains_key(id.as_str())) {
        return Err(EvalError::NoOverlap);
    }
    Ok(truth
        .iter()
        .map(|(id, gt)| ApeSample {
            frame_id: id.clone(),
            error: est.get(id.as_str()).copied().flatten().map(|p| ape(p, gt)),
            query_time_s: query_time_s.get(id).copied().unwrap_or(0.0),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `ape_per_frame.csv`, `recall.csv` and `summary.csv` into `dir`.
pub fn write_reports(dir: &Path, samples: &[ApeSample], thresholds: &[(f64, f64)]) -> Result<Summary, EvalError> {
    let mut out = CsvOut::create(
        &dir.join("ape_per_frame.csv"),
        &["frame_id", "localized", "trans_err_m", "rot_err_deg", "query_time_s"],
    )?;
    for s in samples {
        out.row([
            s.frame_id.clone(),
            u8::from(s.localized()).to_string(),
            opt(s.error.map(|e| e.0)),
            opt(s.error.map(|e| e.1)),
            fmt_f64(s.query_time_s),
        ])?;
    }
    out.finish()?;

    let mut out = CsvOut::create(&dir.join("recall.csv"), &["trans_thresh_m", "rot_thresh_deg", "recall"])?;
    for (&(t, r), v) in thresholds.iter().zip(recall_curve(samples, thresholds)) {
        out.row([fmt_f64(t), fmt_f64(r), fmt_f64(v)])?;
    }
    out.finish()?;

    let s = summarize(samples);
    let mut out = CsvOut::create(
        &dir.join("summary.csv"),
        &[
            "n_frames",
            "n_localized",
            "pct_localized",
            "median_trans_err_m_localized",
            "median_rot_err_deg_localized",
            "mean_query_time_s",
        ],
    )?;
    out.row([
        s.n_frames.to_string(),
        s.n_localized.to_string(),
        fmt_f64(s.pct_localized),
        opt(s.median_trans_m),
        opt(s.median_rot_deg),
        opt(s.mean_query_time_s),
    ])?;
    out.finish()?;
    Ok(s)
}
