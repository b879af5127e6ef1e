//! End-to-end localization of query batches and its on-disk outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::eval::{self, Summary};
use crate::geometry::Pose;
use crate::ingest::io::{fmt_f64, CsvOut, Table};
use crate::ingest::{
    batch, diagonal_covariance, read_partial_pose_table, read_pose_table, write_partial_pose_table, Dataset, Frame,
    IngestError, QuerySequence, Rig,
};
use crate::matching::{match_frames, pair_seed, MatchSet, MatcherConfig, MatcherKind, MatchingError};
use crate::pgo::{build_graph, optimize, PgoError, PgoReport};
use crate::pose_estimation::{lo_ransac_pnp, PoseEstimate, PoseStatus, RefCamera};
use crate::retrieval::{global_descriptor, top_k, RetrievalError};
use crate::triangulation::{assemble_3d2d, lift_frame, select_neighbors, Corr3D2D};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Pgo(#[from] PgoError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("reference frame `{0}` has no global pose")]
    UnposedReference(String),
    #[error("{0}")]
    Report(String),
}

/// Per-frame wall-clock time spent in each stage, seconds. Batch-level stages
/// (neighbor selection, pose-graph optimization) are split evenly over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub retrieval: f64,
    pub matching: f64,
    pub neighbors: f64,
    pub triangulation: f64,
    pub pnp: f64,
    pub pgo: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.retrieval + self.matching + self.neighbors + self.triangulation + self.pnp + self.pgo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub frame_id: String,
    pub neighbor: Option<String>,
    pub candidates: Vec<String>,
    pub n_corrs: usize,
    /// Absolute estimate from PnP, before the pose graph.
    pub estimate: PoseEstimate,
    /// Final `T(r←i)` after the pose graph; `None` if the batch failed.
    pub refined: Option<Pose>,
    pub times: StageTimes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub sequence_id: String,
    pub index: usize,
    pub frames: Vec<FrameResult>,
    pub fixed_frame: Option<String>,
    pub pgo: Result<PgoReport, String>,
    pub wall_time_s: f64,
}

impl BatchResult {
    pub fn localized(&self) -> bool {
        self.pgo.is_ok()
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Self(Instant::now())
    }

    /// Seconds since the previous lap.
    fn lap(&mut self) -> f64 {
        let now = Instant::now();
        let dt = now.duration_since(self.0).as_secs_f64();
        self.0 = now;
        dt
    }
}

/// Shared, read-only retrieval index over the references.
pub struct ReferenceIndex<'a> {
    frames: Vec<&'a Frame>,
    descriptors: Vec<Vec<f64>>,
    cameras: HashMap<&'a str, RefCamera>,
}

impl<'a> ReferenceIndex<'a> {
    pub fn new(references: &'a [Frame]) -> Result<Self, PipelineError> {
        let mut cameras = HashMap::new();
        for f in references {
            let cam = RefCamera::from_frame(f).ok_or_else(|| PipelineError::UnposedReference(f.frame_id.clone()))?;
            cameras.insert(f.frame_id.as_str(), cam);
        }
        Ok(Self {
            frames: references.iter().collect(),
            descriptors: references.iter().map(global_descriptor).collect(),
            cameras,
        })
    }

    /// Panics if `id` is not an indexed reference.
    pub fn frame(&self, id: &str) -> &'a Frame {
        self.frames.iter().find(|f| f.frame_id == id).copied().expect("indexed reference")
    }

    /// Top-`k` reference ids for one query image.
    pub fn retrieve(&self, query: &Frame, k: usize) -> Result<Vec<String>, PipelineError> {
        let q = global_descriptor(query);
        let view: Vec<(&str, &[f64])> = self
            .frames
            .iter()
            .zip(&self.descriptors)
            .map(|(f, d)| (f.frame_id.as_str(), d.as_slice()))
            .collect();
        Ok(top_k(&query.frame_id, &q, &view, k)?
            .candidates
            .into_iter()
            .map(|c| c.frame_id)
            .collect())
    }
}

fn matcher_for(dataset: &Dataset, cfg: &PipelineConfig) -> MatcherConfig {
    let dir = match cfg.matching.kind {
        MatcherKind::PrecomputedFile => dataset.root.as_ref().map(|r| r.join("matches")),
        _ => None,
    };
    cfg.matching.matcher(dir)
}

/// Localizes the rigs of one batch; errors abort only this batch.
pub fn localize_batch(
    seq: &QuerySequence,
    rigs: &[Rig],
    index: &ReferenceIndex,
    matcher: &MatcherConfig,
    cfg: &PipelineConfig,
) -> Result<(Vec<FrameResult>, Option<usize>, Result<PgoReport, PgoError>), PipelineError> {
    let n = rigs.len();
    let mut times = vec![StageTimes::default(); n];
    let mut timer = Timer::start();

    // Retrieval, per camera image; a rig's candidates are the union in order.
    let mut candidates: Vec<Vec<Vec<String>>> = Vec::with_capacity(n);
    for (rig, t) in rigs.iter().zip(times.iter_mut()) {
        let per_cam = rig
            .frames
            .iter()
            .map(|f| index.retrieve(f, cfg.retrieval.k))
            .collect::<Result<Vec<_>, _>>()?;
        candidates.push(per_cam);
        t.retrieval = timer.lap();
    }

    // Query-to-reference matches.
    let mut ref_matches: Vec<Vec<Vec<MatchSet>>> = Vec::with_capacity(n);
    for ((rig, cands), t) in rigs.iter().zip(&candidates).zip(times.iter_mut()) {
        let per_cam = rig
            .frames
            .iter()
            .zip(cands)
            .map(|(f, ids)| ids.iter().map(|id| match_frames(f, index.frame(id), matcher)).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        ref_matches.push(per_cam);
        t.matching = timer.lap();
    }

    let poses: Vec<Pose> = rigs.iter().map(|r| r.pose).collect();
    let neighbors = select_neighbors(&poses, cfg.triangulation.t_min, cfg.triangulation.theta_min_deg.to_radians());
    let dt = timer.lap() / n as f64;
    times.iter_mut().for_each(|t| t.neighbors = dt);

    let mut estimates = Vec::with_capacity(n);
    let mut n_corrs = Vec::with_capacity(n);
    for i in 0..n {
        let rig = &rigs[i];
        let Some(j) = neighbors[i] else {
            estimates.push(PoseEstimate::skipped(&rig.rig_frame_id, PoseStatus::SkippedNoNeighbor, 0));
            n_corrs.push(0);
            continue;
        };
        let nb = &rigs[j];
        let mut nb_matches = Vec::with_capacity(rig.frames.len());
        for (c, f) in rig.frames.iter().enumerate() {
            nb_matches.push(match_frames(f, &nb.frames[c], matcher)?);
        }
        times[i].matching += timer.lap();

        let mut corrs = Corr3D2D::new(&rig.rig_frame_id);
        for (c, f) in rig.frames.iter().enumerate() {
            let (lifted, rejects) = lift_frame(
                f,
                &rig.camera_pose(c),
                &nb.frames[c],
                &nb.camera_pose(c),
                &nb_matches[c],
                &cfg.triangulation,
            );
            log::debug!(
                "{}: lifted {} of {} matches ({} rejected)",
                f.frame_id,
                lifted.points.len(),
                nb_matches[c].len(),
                rejects.total()
            );
            let refs: Vec<&Frame> = candidates[i][c].iter().map(|id| index.frame(id)).collect();
            assemble_3d2d(&lifted, &refs, &ref_matches[i][c], &mut corrs);
        }
        times[i].triangulation = timer.lap();

        let cameras: Vec<RefCamera> = corrs.references.iter().map(|id| index.cameras[id.as_str()]).collect();
        let seed = pair_seed(cfg.pnp.seed, &seq.sequence_id, &rig.rig_frame_id);
        let (est, _) = lo_ransac_pnp(&rig.rig_frame_id, &rig.pose, &cameras, &corrs.corrs, &cfg.pnp, seed);
        times[i].pnp = timer.lap();
        n_corrs.push(corrs.len());
        estimates.push(est);
    }

    let cov = seq.covariance_or(diagonal_covariance(cfg.pgo.sigma_t_m, cfg.pgo.sigma_r_deg));
    let graph = build_graph(&estimates, &poses, &cov, &cfg.pgo);
    let (refined, fixed, pgo) = match graph {
        Ok(g) => match optimize(&g, cfg.pgo.max_iters, cfg.pgo.tol) {
            Ok((nodes, report)) => (Some(nodes), g.fixed, Ok(report)),
            Err(e) => (None, g.fixed, Err(e)),
        },
        Err(e) => (None, None, Err(e)),
    };
    let dt = timer.lap() / n as f64;
    times.iter_mut().for_each(|t| t.pgo = dt);

    let frames = (0..n)
        .map(|i| FrameResult {
            frame_id: rigs[i].rig_frame_id.clone(),
            neighbor: neighbors[i].map(|j| rigs[j].rig_frame_id.clone()),
            candidates: {
                let mut all: Vec<String> = Vec::new();
                for id in candidates[i].iter().flatten() {
                    if !all.contains(id) {
                        all.push(id.clone());
                    }
                }
                all
            },
            n_corrs: n_corrs[i],
            estimate: estimates[i].clone(),
            refined: refined.as_ref().map(|r| r[i]),
            times: times[i],
        })
        .collect();
    Ok((frames, fixed, pgo))
}

fn failed_batch(seq: &QuerySequence, rigs: &[Rig], index: usize, msg: String, wall: f64) -> BatchResult {
    let n = rigs.len();
    BatchResult {
        sequence_id: seq.sequence_id.clone(),
        index,
        frames: rigs
            .iter()
            .map(|r| FrameResult {
                frame_id: r.rig_frame_id.clone(),
                neighbor: None,
                candidates: Vec::new(),
                n_corrs: 0,
                estimate: PoseEstimate::skipped(&r.rig_frame_id, PoseStatus::SkippedNoMatches, 0),
                refined: None,
                times: StageTimes {
                    pnp: wall / n as f64,
                    ..Default::default()
                },
            })
            .collect(),
        fixed_frame: None,
        pgo: Err(msg),
        wall_time_s: wall,
    }
}

/// Localizes every batch of every sequence. Batches run in parallel on the
/// current rayon pool; results come back in sequence and batch order.
pub fn run_localize(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<BatchResult>, PipelineError> {
    let index = ReferenceIndex::new(&dataset.references)?;
    let matcher = matcher_for(dataset, cfg);
    let jobs: Vec<(&QuerySequence, usize, std::ops::Range<usize>)> = dataset
        .sequences
        .iter()
        .flat_map(|s| batch(s.len(), cfg.batch.n).into_iter().enumerate().map(move |(b, r)| (s, b, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|(seq, b, range)| {
            let rigs = &seq.rigs[range.clone()];
            let start = Instant::now();
            match localize_batch(seq, rigs, &index, &matcher, cfg) {
                Ok((frames, fixed, pgo)) => {
                    if let Err(e) = &pgo {
                        log::warn!("{} batch {b}: {e}", seq.sequence_id);
                    }
                    BatchResult {
                        sequence_id: seq.sequence_id.clone(),
                        index: *b,
                        fixed_frame: fixed.map(|f| frames[f].frame_id.clone()),
                        frames,
                        pgo: pgo.map_err(|e| e.to_string()),
                        wall_time_s: start.elapsed().as_secs_f64(),
                    }
                }
                Err(e) => {
                    log::error!("{} batch {b} failed: {e}", seq.sequence_id);
                    failed_batch(seq, rigs, *b, e.to_string(), start.elapsed().as_secs_f64())
                }
            }
        })
        .collect();
    Ok(results)
}

fn pose_fields(p: Option<&Pose>) -> Vec<String> {
    match p {
        Some(p) => p.to_record().iter().map(|v| fmt_f64(*v)).collect(),
        None => vec![String::new(); 7],
    }
}

/// Writes `poses.csv`, `estimates.csv`, `pgo.csv` and `timing.csv` into `dir`.
/// All but `timing.csv` are deterministic for a given dataset and configuration.
pub fn write_localize_outputs(dir: &Path, results: &[BatchResult]) -> Result<(), PipelineError> {
    let frames: Vec<(&BatchResult, &FrameResult)> =
        results.iter().flat_map(|b| b.frames.iter().map(move |f| (b, f))).collect();

    let poses: Vec<(String, Option<Pose>)> = frames.iter().map(|(_, f)| (f.frame_id.clone(), f.refined)).collect();
    write_partial_pose_table(&dir.join("poses.csv"), &poses)?;

    let mut out = CsvOut::create(
        &dir.join("estimates.csv"),
        &[
            "frame_id", "sequence_id", "batch", "status", "neighbor", "candidates", "n_corrs", "inliers", "qw", "qx",
            "qy", "qz", "tx", "ty", "tz",
        ],
    )?;
    for (b, f) in &frames {
        let mut row = vec![
            f.frame_id.clone(),
            b.sequence_id.clone(),
            b.index.to_string(),
            f.estimate.status.as_str().to_owned(),
            f.neighbor.clone().unwrap_or_default(),
            f.candidates.join(" "),
            f.n_corrs.to_string(),
            f.estimate.inlier_count.to_string(),
        ];
        row.extend(pose_fields(f.estimate.pose.as_ref()));
        out.row(row)?;
    }
    out.finish()?;

    let mut out = CsvOut::create(
        &dir.join("pgo.csv"),
        &[
            "sequence_id", "batch", "status", "fixed_frame", "iterations", "initial_cost", "final_cost", "converged",
        ],
    )?;
    for b in results {
        let (status, it, c0, c1, conv) = match &b.pgo {
            Ok(r) => (
                "ok".to_owned(),
                r.iterations.to_string(),
                fmt_f64(r.initial_cost),
                fmt_f64(r.final_cost),
                u8::from(r.converged).to_string(),
            ),
            Err(e) => (format!("failed: {e}"), String::new(), String::new(), String::new(), String::new()),
        };
        out.row([
            b.sequence_id.clone(),
            b.index.to_string(),
            status,
            b.fixed_frame.clone().unwrap_or_default(),
            it,
            c0,
            c1,
            conv,
        ])?;
    }
    out.finish()?;

    let mut out = CsvOut::create(
        &dir.join("timing.csv"),
        &[
            "frame_id",
            "retrieval_s",
            "matching_s",
            "neighbors_s",
            "triangulation_s",
            "pnp_s",
            "pgo_s",
            "total_s",
        ],
    )?;
    for (_, f) in &frames {
        let t = f.times;
        out.row(
            std::iter::once(f.frame_id.clone()).chain(
                [t.retrieval, t.matching, t.neighbors, t.triangulation, t.pnp, t.pgo, t.total()]
                    .into_iter()
                    .map(fmt_f64),
            ),
        )?;
    }
    out.finish()?;
    Ok(())
}

fn read_timing(path: &Path) -> Result<HashMap<String, f64>, PipelineError> {
    let Some(t) = Table::read_optional(path)? else {
        return Ok(HashMap::new());
    };
    let col = t
        .headers
        .iter()
        .position(|h| h == "total_s")
        .ok_or_else(|| t.malformed(1, "missing `total_s` column"))?;
    t.rows
        .iter()
        .map(|(line, row)| Ok((row[0].clone(), t.f64_at(*line, row, col)?)))
        .collect()
}

/// Compares `est_dir/poses.csv` with the ground-truth table and writes the
/// eval reports into `out_dir`.
pub fn run_evaluate(
    est_dir: &Path,
    gt_file: &Path,
    out_dir: &Path,
    thresholds: &[(f64, f64)],
) -> Result<Summary, PipelineError> {
    let truth = read_pose_table(gt_file)?;
    let est = read_partial_pose_table(&est_dir.join("poses.csv"))?;
    let times = read_timing(&est_dir.join("timing.csv"))?;
    let samples = eval::compare(&est, &truth, &times)?;
    Ok(eval::write_reports(out_dir, &samples, thresholds)?)
}

/// Concatenates CSV files with identical headers, prefixing each row with its source path.
pub fn concat_csvs(inputs: &[PathBuf], out: &Path) -> Result<usize, PipelineError> {
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for path in inputs {
        let t = Table::read(path)?;
        match &header {
            None => header = Some(t.headers.clone()),
            Some(h) if *h != t.headers => {
                return Err(PipelineError::Report(format!(
                    "{} has header `{}`, expected `{}`",
                    path.display(),
                    t.headers.join(","),
                    h.join(",")
                )));
            }
            Some(_) => {}
        }
        let source = path.display().to_string();
        rows.extend(t.rows.into_iter().map(|(_, r)| (source.clone(), r)));
    }
    let header = header.ok_or_else(|| PipelineError::Report("no input files".into()))?;
    let cols: Vec<&str> = std::iter::once("source").chain(header.iter().map(String::as_str)).collect();
    let mut w = CsvOut::create(out, &cols)?;
    let n = rows.len();
    for (source, r) in rows {
        w.row(std::iter::once(source).chain(r))?;
    }
    w.finish()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, SceneSpec};

    fn oracle_cfg(sim: &crate::simulator::Simulation) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.matching.kind = MatcherKind::SyntheticOracle;
        cfg.matching.outlier_rate = sim.spec.match_outlier_rate;
        cfg.matching.seed = sim.spec.seed;
        cfg
    }

    #[test]
    fn noise_free_scene_is_recovered_exactly() {
        let sim = generate(&SceneSpec::default().noise_free()).unwrap();
        let results = run_localize(&sim.dataset, &oracle_cfg(&sim)).unwrap();
        assert_eq!(results.len(), 1);
        for (f, (id, gt)) in results[0].frames.iter().zip(&sim.truth.poses) {
            assert_eq!(&f.frame_id, id);
            let (t, r) = eval::ape(&f.refined.unwrap(), gt);
            assert!(t < 1e-6 && r.to_radians() < 1e-6, "{id}: {t} m, {r} deg");
        }
    }

    #[test]
    fn reruns_are_identical() {
        let sim = generate(&SceneSpec::default()).unwrap();
        let cfg = oracle_cfg(&sim);
        let strip = |r: Vec<BatchResult>| -> Vec<BatchResult> {
            r.into_iter()
                .map(|mut b| {
                    b.wall_time_s = 0.0;
                    b.frames.iter_mut().for_each(|f| f.times = StageTimes::default());
                    b
                })
                .collect()
        };
        let a = strip(run_localize(&sim.dataset, &cfg).unwrap());
        let b = strip(run_localize(&sim.dataset, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn unrelated_references_reject_every_frame() {
        let sim = generate(&SceneSpec::default().noise_free()).unwrap();
        let other = generate(&SceneSpec {
            seed: 99,
            ..SceneSpec::default().noise_free()
        })
        .unwrap();
        let mut ds = sim.dataset.clone();
        ds.references = other.dataset.references.clone();
        let results = run_localize(&ds, &oracle_cfg(&sim)).unwrap();
        assert!(results.iter().all(|b| !b.localized()));
        for f in results.iter().flat_map(|b| &b.frames) {
            assert!(matches!(
                f.estimate.status,
                PoseStatus::RejectedFewInliers | PoseStatus::SkippedNoNeighbor | PoseStatus::SkippedNoMatches
            ));
        }
    }
}
