//! Synthetic worlds with exact ground truth: scene points, posed reference
//! cameras, a query trajectory with drifting odometry, and noisy keypoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pose, Tangent6};
use crate::ingest::io::CsvOut;
use crate::ingest::{diagonal_covariance, save_dataset, write_pose_table, Dataset, Descriptors, Frame, IngestError, QuerySequence, Rig};
use crate::matching::{match_file_name, match_frames, write_match_file, MatchSet, MatcherConfig, MatcherKind, MatchingError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Line,
    #[default]
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    pub n_refs: usize,
    pub trajectory: Trajectory,
    pub length_m: f64,
    pub n_frames: usize,
    /// Distance from the trajectory center to the scene centroid.
    pub standoff_m: f64,
    /// Distance from each reference camera to the scene centroid.
    pub ref_standoff_m: f64,
    /// Full angular width of the sector holding the reference cameras.
    pub ref_spread_deg: f64,
    /// Per-axis standard deviation of reference viewing-direction jitter.
    pub ref_jitter_deg: f64,
    pub pixel_noise_sigma: f64,
    pub match_outlier_rate: f64,
    /// Per-step odometry noise.
    pub odom_sigma_t_m: f64,
    pub odom_sigma_r_deg: f64,
    /// Extra keypoints per frame, as a fraction of the visible points, with no scene point.
    pub distractor_rate: f64,
    pub max_range_m: f64,
    pub descriptor_dim: usize,
    pub global_dim: usize,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 200,
            box_min: [-3.0, -1.5, 4.0],
            box_max: [3.0, 1.5, 8.0],
            n_refs: 5,
            trajectory: Trajectory::Arc,
            length_m: 2.0,
            n_frames: 10,
            standoff_m: 6.0,
            ref_standoff_m: 7.0,
            ref_spread_deg: 40.0,
            ref_jitter_deg: 2.0,
            pixel_noise_sigma: 1.0,
            match_outlier_rate: 0.2,
            odom_sigma_t_m: 0.005,
            odom_sigma_r_deg: 0.05,
            distractor_rate: 0.2,
            max_range_m: 30.0,
            descriptor_dim: 32,
            global_dim: 64,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
                width: 640.0,
                height: 480.0,
            },
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Everything exact: no pixel noise, outliers, drift or distractors.
    pub fn noise_free(self) -> Self {
        Self {
            pixel_noise_sigma: 0.0,
            match_outlier_rate: 0.0,
            odom_sigma_t_m: 0.0,
            odom_sigma_r_deg: 0.0,
            distractor_rate: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_owned()));
        if self.n_points == 0 || self.n_refs == 0 || self.n_frames == 0 {
            return bad("n_points, n_refs and n_frames must be at least 1");
        }
        if self.descriptor_dim == 0 || self.global_dim == 0 {
            return bad("descriptor dimensions must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.match_outlier_rate) {
            return bad("match_outlier_rate must lie in [0, 1]");
        }
        if !(self.distractor_rate >= 0.0) {
            return bad("distractor_rate must be non-negative");
        }
        if (0..3).any(|k| !(self.box_max[k] > self.box_min[k])) {
            return bad("point box is degenerate");
        }
        let sigmas = [self.pixel_noise_sigma, self.odom_sigma_t_m, self.odom_sigma_r_deg, self.ref_jitter_deg];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise levels must be finite and non-negative");
        }
        if !(self.length_m >= 0.0 && self.standoff_m > 0.0 && self.ref_standoff_m > 0.0 && self.max_range_m > 0.0) {
            return bad("distances must be positive");
        }
        self.intrinsics.validate().map_err(|e| SimError::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("frame `{0}` sees no scene point")]
    NoVisiblePoints(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<(u64, Vector3<f64>)>,
    /// True `T(r←i)` per query frame.
    pub poses: Vec<(String, Pose)>,
    /// True `T(q←r)`: the alignment the pipeline has to recover.
    pub query_from_ref: Pose,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub spec: SceneSpec,
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Camera-to-world pose looking from `eye` at `target`, image y pointing along world +y.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let f = (target - eye).normalize();
    let right = Vector3::y().cross(&f).normalize();
    let down = f.cross(&right);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, f]));
    Pose::new(UnitQuaternion::from_rotation_matrix(&r), eye)
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = crate::ingest::norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_pose<R: Rng>(rng: &mut R, sigma_t: f64, sigma_r: f64) -> Pose {
    let mut xi = Tangent6::zeros();
    for k in 0..6 {
        let s = if k < 3 { sigma_t } else { sigma_r };
        if s > 0.0 {
            xi[k] = Normal::new(0.0, s).expect("finite sigma").sample(rng);
        }
    }
    Pose::exp(&xi)
}

struct World<'a> {
    spec: &'a SceneSpec,
    points: &'a [(u64, Vector3<f64>)],
    descriptors: &'a [Vec<f64>],
    global_words: &'a [Vec<f64>],
}

impl World<'_> {
    /// Observes the scene from camera pose `T(r←cam)`.
    fn observe<R: Rng>(&self, rng: &mut R, id: &str, ref_from_cam: &Pose) -> Result<Frame, SimError> {
        let spec = self.spec;
        let k = &spec.intrinsics;
        let cam_from_ref = ref_from_cam.inverse();
        let noise = (spec.pixel_noise_sigma > 0.0).then(|| Normal::new(0.0, spec.pixel_noise_sigma).expect("finite sigma"));
        let mut obs: Vec<(Vector2<f64>, Option<usize>)> = Vec::new();
        let mut global = vec![0.0; spec.global_dim];
        for (p, (_, x)) in self.points.iter().enumerate() {
            let pc = cam_from_ref.transform_point(x);
            if pc.norm() > spec.max_range_m {
                continue;
            }
            let Some(mut px) = k.project_camera_point(&pc) else { continue };
            if !k.contains(&px) {
                continue;
            }
            if let Some(n) = &noise {
                px += Vector2::new(n.sample(rng), n.sample(rng));
                if !k.contains(&px) {
                    continue;
                }
            }
            // Nearer points weigh more, so the descriptor varies with viewpoint.
            let weight = 1.0 / pc.norm();
            for (g, w) in global.iter_mut().zip(&self.global_words[p]) {
                *g += weight * w;
            }
            obs.push((px, Some(p)));
        }
        if obs.is_empty() {
            return Err(SimError::NoVisiblePoints(id.to_owned()));
        }
        let n_distractors = (obs.len() as f64 * spec.distractor_rate).round() as usize;
        for _ in 0..n_distractors {
            let px = Vector2::new(rng.random_range(0.0..k.width), rng.random_range(0.0..k.height));
            obs.push((px, None));
        }
        obs.shuffle(rng);

        let mut frame = Frame::new(id, "cam0", *k);
        frame.pose = Some(*ref_from_cam);
        frame.keypoints = obs.iter().map(|o| o.0).collect();
        let rows: Vec<Vec<f64>> = obs
            .iter()
            .map(|o| match o.1 {
                Some(p) => self.descriptors[p].clone(),
                None => random_unit(rng, spec.descriptor_dim),
            })
            .collect();
        frame.descriptors = Some(Descriptors::from_rows(&rows));
        frame.point_ids = Some(obs.iter().map(|o| o.1.map(|p| self.points[p].0)).collect());
        let n = crate::ingest::norm(&global);
        frame.global_descriptor = Some(global.into_iter().map(|g| g / n).collect());
        Ok(frame)
    }
}

/// Generates a world and its dataset in memory. Identical specs give identical output.
pub fn generate(spec: &SceneSpec) -> Result<Simulation, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lo = Vector3::from(spec.box_min);
    let hi = Vector3::from(spec.box_max);
    let centroid = (lo + hi) / 2.0;

    let points: Vec<(u64, Vector3<f64>)> = (0..spec.n_points as u64)
        .map(|id| (id, Vector3::from_fn(|k, _| rng.random_range(lo[k]..hi[k]))))
        .collect();
    let descriptors: Vec<Vec<f64>> = (0..spec.n_points).map(|_| random_unit(&mut rng, spec.descriptor_dim)).collect();
    let global_words: Vec<Vec<f64>> = (0..spec.n_points).map(|_| random_unit(&mut rng, spec.global_dim)).collect();
    let world = World {
        spec,
        points: &points,
        descriptors: &descriptors,
        global_words: &global_words,
    };

    // Query cameras sit on the −z side of the centroid, looking at it.
    let n = spec.n_frames;
    let frac = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
    let query_truth: Vec<Pose> = (0..n)
        .map(|i| {
            let eye = match spec.trajectory {
                Trajectory::Line => centroid + Vector3::new(frac(i) * spec.length_m, 0.0, -spec.standoff_m),
                Trajectory::Arc => {
                    let a = frac(i) * spec.length_m / spec.standoff_m;
                    centroid + spec.standoff_m * Vector3::new(a.sin(), 0.0, -a.cos())
                }
            };
            look_at(eye, centroid)
        })
        .collect();

    let spread = spec.ref_spread_deg.to_radians();
    let jitter = spec.ref_jitter_deg.to_radians();
    let mut references = Vec::with_capacity(spec.n_refs);
    for r in 0..spec.n_refs {
        let a = if spec.n_refs > 1 {
            (r as f64 / (spec.n_refs - 1) as f64 - 0.5) * spread
        } else {
            0.0
        };
        let eye = centroid
            + spec.ref_standoff_m * Vector3::new(a.sin(), 0.0, -a.cos())
            + Vector3::new(0.0, rng.random_range(-0.3..0.3), 0.0);
        let pose = look_at(eye, centroid).compose(&random_pose(&mut rng, 0.0, jitter));
        references.push(world.observe(&mut rng, &format!("r{r:04}"), &pose)?);
    }

    let query_from_ref = Pose::exp(&Tangent6::from_fn(|k, _| {
        if k < 3 {
            rng.random_range(-5.0..5.0)
        } else {
            rng.random_range(-1.5..1.5)
        }
    }));
    let sigma_r = spec.odom_sigma_r_deg.to_radians();
    let mut odometry = Vec::with_capacity(n);
    let mut rigs = Vec::with_capacity(n);
    for (i, truth) in query_truth.iter().enumerate() {
        let odo = match odometry.last() {
            None => query_from_ref.compose(truth),
            Some(prev) => {
                let step = query_truth[i - 1].inverse().compose(truth);
                Pose::compose(prev, &step.compose(&random_pose(&mut rng, spec.odom_sigma_t_m, sigma_r)))
            }
        };
        odometry.push(odo);
        let mut frame = world.observe(&mut rng, &format!("q{i:04}"), truth)?;
        frame.pose = Some(odo);
        rigs.push(Rig::monocular(frame).expect("posed frame"));
    }
    let covariance = (spec.odom_sigma_t_m > 0.0 && sigma_r > 0.0)
        .then(|| diagonal_covariance(spec.odom_sigma_t_m, spec.odom_sigma_r_deg));

    let dataset = Dataset {
        root: None,
        sequences: vec![QuerySequence {
            sequence_id: "seq0".into(),
            rigs,
            covariance,
        }],
        references,
    };
    let poses = query_truth
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("q{i:04}"), *p))
        .collect();
    Ok(Simulation {
        spec: spec.clone(),
        dataset,
        truth: GroundTruth {
            points,
            poses,
            query_from_ref,
        },
    })
}

impl Simulation {
    /// Oracle matcher settings that reproduce the spec's outlier rate.
    pub fn matcher(&self) -> MatcherConfig {
        MatcherConfig {
            kind: MatcherKind::SyntheticOracle,
            outlier_rate: self.spec.match_outlier_rate,
            seed: self.spec.seed,
            ..Default::default()
        }
    }

    /// Pairs for which match files are exported: every query against every
    /// reference, and every ordered pair of queries in the same sequence.
    pub fn match_pairs(&self) -> Vec<(&Frame, &Frame)> {
        let mut out = Vec::new();
        for seq in &self.dataset.sequences {
            let frames: Vec<&Frame> = seq.rigs.iter().flat_map(|r| r.frames.iter()).collect();
            for (i, a) in frames.iter().enumerate() {
                out.extend(self.dataset.references.iter().map(|r| (*a, r)));
                out.extend(frames[i + 1..].iter().map(|b| (*a, *b)));
            }
        }
        out
    }

    /// Writes the dataset plus `gt_poses.csv`, `matches/` and `gt_inliers/`.
    pub fn write(&self, root: &Path) -> Result<(), SimError> {
        save_dataset(&self.dataset, root)?;
        write_pose_table(&root.join("gt_poses.csv"), &self.truth.poses)?;
        write_spec(&self.spec, &root.join("scene.toml"))?;
        let matcher = self.matcher();
        let match_dir = root.join("matches");
        let inlier_dir = root.join("gt_inliers");
        for (a, b) in self.match_pairs() {
            let set = match_frames(a, b, &matcher)?;
            write_match_file(&match_dir, &set)?;
            write_inlier_file(&inlier_dir, &set, &inlier_mask(a, b, &set))?;
        }
        Ok(())
    }
}

/// True where both keypoints of a match observe the same scene point.
pub fn inlier_mask(a: &Frame, b: &Frame, set: &MatchSet) -> Vec<bool> {
    let (Some(ia), Some(ib)) = (&a.point_ids, &b.point_ids) else {
        return vec![false; set.len()];
    };
    set.matches
        .iter()
        .map(|m| ia[m.idx_a].is_some() && ia[m.idx_a] == ib[m.idx_b])
        .collect()
}

fn write_inlier_file(dir: &Path, set: &MatchSet, mask: &[bool]) -> Result<(), IngestError> {
    let mut out = CsvOut::create(&dir.join(match_file_name(&set.frame_a, &set.frame_b)), &["idxA", "idxB", "inlier"])?;
    for (m, inlier) in set.matches.iter().zip(mask) {
        out.row([m.idx_a.to_string(), m.idx_b.to_string(), u8::from(*inlier).to_string()])?;
    }
    out.finish()
}

pub fn read_spec(path: &Path) -> Result<SceneSpec, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))
}

pub fn write_spec(spec: &SceneSpec, path: &Path) -> Result<(), SimError> {
    let text = toml::to_string(spec).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| {
        SimError::Ingest(IngestError::Io {
            path: PathBuf::from(path),
            source: e,
        })
    })
}

/// Ground-truth poses by frame id.
pub fn truth_map(truth: &GroundTruth) -> BTreeMap<&str, &Pose> {
    truth.poses.iter().map(|(id, p)| (id.as_str(), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::ingest::load_dataset;

    #[test]
    fn noise_free_keypoints_are_exact_projections() {
        let sim = generate(&SceneSpec::default().noise_free()).unwrap();
        let truth = truth_map(&sim.truth);
        let seq = &sim.dataset.sequences[0];
        for rig in &seq.rigs {
            let f = &rig.frames[0];
            let cam_from_ref = truth[f.frame_id.as_str()].inverse();
            for (px, id) in f.keypoints.iter().zip(f.point_ids.as_ref().unwrap()) {
                let x = sim.truth.points[id.unwrap() as usize].1;
                assert_eq!(*px, project(&f.intrinsics, &cam_from_ref, &x).unwrap());
            }
        }
        // Exact odometry is the true trajectory moved by the alignment.
        let g = sim.truth.query_from_ref;
        for (rig, (_, t)) in seq.rigs.iter().zip(&sim.truth.poses) {
            let expect = g.compose(t);
            assert!((rig.pose.translation() - expect.translation()).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn written_dataset_reloads_and_masks_mark_rewired_matches() {
        let dir = tempfile::tempdir().unwrap();
        let sim = generate(&SceneSpec {
            n_frames: 3,
            n_refs: 2,
            ..Default::default()
        })
        .unwrap();
        sim.write(dir.path()).unwrap();
        let mut ds = load_dataset(dir.path()).unwrap();
        ds.root = None;
        ds.sequences[0].sequence_id = sim.dataset.sequences[0].sequence_id.clone();
        assert!(ds == sim.dataset, "reloaded dataset differs");
        assert!(dir.path().join("matches/q0000__r0001.csv").is_file());
        assert!(dir.path().join("gt_inliers/q0000__q0002.csv").is_file());

        let (a, b) = sim.match_pairs()[0];
        let set = match_frames(a, b, &sim.matcher()).unwrap();
        let mask = inlier_mask(a, b, &set);
        let outliers = mask.iter().filter(|m| !**m).count() as f64 / mask.len() as f64;
        assert!(outliers > 0.05 && outliers < 0.4, "{outliers}");
    }

    #[test]
    fn invisible_scene_is_an_error() {
        let spec = SceneSpec {
            max_range_m: 0.5,
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(SimError::NoVisiblePoints(_))));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let spec = SceneSpec {
            seed: 9,
            trajectory: Trajectory::Line,
            ..Default::default()
        };
        write_spec(&spec, &path).unwrap();
        assert_eq!(read_spec(&path).unwrap(), spec);
        assert!(SceneSpec { match_outlier_rate: 1.5, ..Default::default() }.validate().is_err());
    }
}
