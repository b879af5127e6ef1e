//! Data model for posed query sequences and posed reference images, plus the
//! on-disk dataset layout.
//!
//! A monocular capture is a single-camera [`Rig`]; every downstream stage
//! works on rigs.

mod geodetic;
pub(crate) mod io;

use std::ops::Range;
use std::path::PathBuf;

use nalgebra::{Matrix6, Vector2};

use crate::geometry::{CameraIntrinsics, GeometryError, Pose};

pub use geodetic::{geodetic_to_local, heading_pose, GeodeticPoint};
pub use io::{
    load_dataset, read_partial_pose_table, read_pose_table, save_dataset, write_partial_pose_table, write_pose_table,
};

/// Default per-axis odometry standard deviations when a sequence carries no covariance.
pub const DEFAULT_ODOM_SIGMA_T_M: f64 = 0.01;
pub const DEFAULT_ODOM_SIGMA_R_DEG: f64 = 0.5;

const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed { path: PathBuf, line: u64, msg: String },
    #[error("{path}: invariant violated for `{record}`: {msg}")]
    Invariant {
        path: PathBuf,
        record: String,
        msg: String,
    },
    #[error("no reference frames in {0}")]
    NoReferences(PathBuf),
    #[error("no query frames in {0}")]
    NoQueries(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("geodetic coordinate out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Row-major table of fixed-length local descriptors, one row per keypoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f64>,
}

impl Descriptors {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "descriptor table is ragged");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(1, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// One image: intrinsics, keypoints and optional descriptors.
///
/// `pose` is `T(q←frame)` for query images and `T(r←frame)` for references.
/// `point_ids` is only present on synthetic data, where it links keypoints to
/// scene points for the oracle matcher.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Option<Pose>,
    pub keypoints: Vec<Vector2<f64>>,
    pub descriptors: Option<Descriptors>,
    pub global_descriptor: Option<Vec<f64>>,
    pub point_ids: Option<Vec<Option<u64>>>,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>, camera_id: impl Into<String>, intrinsics: CameraIntrinsics) -> Self {
        Self {
            frame_id: frame_id.into(),
            camera_id: camera_id.into(),
            intrinsics,
            pose: None,
            keypoints: Vec::new(),
            descriptors: None,
            global_descriptor: None,
            point_ids: None,
        }
    }

    /// Checks the per-frame invariants, returning a human-readable violation.
    pub fn check(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        if let Some(k) = self
            .keypoints
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && self.intrinsics.contains(p)))
        {
            let p = self.keypoints[k];
            return Err(format!("keypoint {k} at ({}, {}) lies outside the image", p.x, p.y));
        }
        if let Some(d) = &self.descriptors {
            if d.len() != self.keypoints.len() {
                return Err(format!(
                    "{} descriptors for {} keypoints",
                    d.len(),
                    self.keypoints.len()
                ));
            }
            if let Some(i) = d.rows().position(|r| (norm(r) - 1.0).abs() > UNIT_NORM_TOL) {
                return Err(format!("descriptor {i} is not unit-norm"));
            }
        }
        if let Some(g) = &self.global_descriptor {
            if (norm(g) - 1.0).abs() > UNIT_NORM_TOL {
                return Err("global descriptor is not unit-norm".into());
            }
        }
        if let Some(ids) = &self.point_ids {
            if ids.len() != self.keypoints.len() {
                return Err(format!("{} point ids for {} keypoints", ids.len(), self.keypoints.len()));
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigCamera {
    pub camera_id: String,
    /// `T(rig←cam)`
    pub extrinsic: Pose,
}

/// A rig-frame: one image per camera, sharing the odometry pose `T(q←rig)`.
/// `frames[c]` is the image of `cameras[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub rig_frame_id: String,
    pub rig_id: String,
    pub pose: Pose,
    pub cameras: Vec<RigCamera>,
    pub frames: Vec<Frame>,
}

impl Rig {
    /// Wraps a posed monocular frame as a single-camera rig.
    pub fn monocular(frame: Frame) -> Result<Self, String> {
        let pose = frame
            .pose
            .ok_or_else(|| format!("frame `{}` has no odometry pose", frame.frame_id))?;
        Ok(Self {
            rig_frame_id: frame.frame_id.clone(),
            rig_id: frame.camera_id.clone(),
            pose,
            cameras: vec![RigCamera {
                camera_id: frame.camera_id.clone(),
                extrinsic: Pose::identity(),
            }],
            frames: vec![frame],
        })
    }

    /// `T(q←cam)` for camera slot `c`.
    pub fn camera_pose(&self, c: usize) -> Pose {
        self.pose.compose(&self.cameras[c].extrinsic)
    }

    pub fn is_monocular(&self) -> bool {
        self.cameras.len() == 1 && self.cameras[0].extrinsic == Pose::identity()
    }
}

/// Ordered, locally posed query rigs and their odometry covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySequence {
    pub sequence_id: String,
    pub rigs: Vec<Rig>,
    /// 6×6 covariance in `[ρ, φ]` order; `None` means "use the configured default".
    pub covariance: Option<Matrix6<f64>>,
}

impl QuerySequence {
    pub fn len(&self) -> usize {
        self.rigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rigs.is_empty()
    }

    pub fn odometry(&self) -> Vec<Pose> {
        self.rigs.iter().map(|r| r.pose).collect()
    }

    pub fn covariance_or(&self, default: Matrix6<f64>) -> Matrix6<f64> {
        self.covariance.unwrap_or(default)
    }
}

/// Diagonal odometry covariance from per-axis standard deviations.
pub fn diagonal_covariance(sigma_t_m: f64, sigma_r_deg: f64) -> Matrix6<f64> {
    let st = sigma_t_m * sigma_t_m;
    let sr = sigma_r_deg.to_radians().powi(2);
    Matrix6::from_diagonal(&nalgebra::Vector6::new(st, st, st, sr, sr, sr))
}

pub fn is_spd(m: &Matrix6<f64>) -> bool {
    let sym = (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
    sym && m.cholesky().is_some()
}

/// A loaded dataset: query sequences plus the posed reference images.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Directory the dataset was loaded from; precomputed matches are resolved against it.
    pub root: Option<PathBuf>,
    pub sequences: Vec<QuerySequence>,
    pub references: Vec<Frame>,
}

impl Dataset {
    pub fn reference(&self, frame_id: &str) -> Option<&Frame> {
        self.references.iter().find(|f| f.frame_id == frame_id)
    }
}

/// Splits a sequence of `len` frames into consecutive chunks of `n`.
///
/// A trailing chunk of two or more frames is kept; a trailing singleton cannot
/// be triangulated and is dropped with a warning.
///
/// # Panics
///
/// Panics if `n < 2`.
pub fn batch(len: usize, n: usize) -> Vec<Range<usize>> {
    assert!(n >= 2, "batch size must be at least 2");
    let mut out = Vec::with_capacity(len.div_ceil(n));
    let mut start = 0;
    while start < len {
        let end = (start + n).min(len);
        if end - start >= 2 {
            out.push(start..end);
        } else {
            log::warn!("dropping trailing single-frame batch at index {start}");
        }
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes() {
        let sizes = |len, n| batch(len, n).iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(sizes(25, 10), vec![10, 10, 5]);
        assert_eq!(sizes(10, 10), vec![10]);
        assert_eq!(sizes(11, 10), vec![10]);
        assert_eq!(sizes(0, 10), Vec::<usize>::new());
        assert_eq!(batch(25, 10)[2], 20..25);
    }

    #[test]
    #[should_panic]
    fn batch_rejects_size_one() {
        batch(5, 1);
    }

    #[test]
    fn default_covariance_is_spd() {
        let c = diagonal_covariance(DEFAULT_ODOM_SIGMA_T_M, DEFAULT_ODOM_SIGMA_R_DEG);
        assert!(is_spd(&c));
        assert!((c[(0, 0)] - 1e-4).abs() < 1e-18);
        let mut bad = c;
        bad[(0, 1)] = 1.0;
        assert!(!is_spd(&bad));
    }

    #[test]
    fn frame_invariants() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100.0, 100.0).unwrap();
        let mut f = Frame::new("a", "cam", k);
        f.keypoints = vec![Vector2::new(10.0, 10.0)];
        assert!(f.check().is_ok());
        f.keypoints.push(Vector2::new(120.0, 10.0));
        assert!(f.check().unwrap_err().contains("keypoint 1"));
        f.keypoints.pop();
        f.descriptors = Some(Descriptors::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]));
        assert!(f.check().unwrap_err().contains("2 descriptors"));
        f.descriptors = Some(Descriptors::from_rows(&[vec![0.6, 0.7]]));
        assert!(f.check().unwrap_err().contains("unit-norm"));
    }
}
