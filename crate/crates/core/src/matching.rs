//! 2D-2D correspondences between image pairs.
//!
//! Three interchangeable matchers sit behind [`match_frames`]:
//! mutual nearest neighbors on local descriptors, precomputed match files,
//! and a ground-truth oracle for synthetic frames that carry scene-point ids.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::io::{fmt_f64, CsvOut, Table};
use crate::ingest::{Descriptors, Frame, IngestError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    /// Confidence in `[0, 1]`.
    pub score: f64,
}

/// One-to-one correspondences between keypoints of frame A and frame B.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub frame_a: String,
    pub frame_b: String,
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn empty(a: &str, b: &str) -> Self {
        Self {
            frame_a: a.to_owned(),
            frame_b: b.to_owned(),
            matches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// The same pairs seen from B, sorted by B's index.
    pub fn swapped(&self) -> MatchSet {
        let mut matches: Vec<Match> = self
            .matches
            .iter()
            .map(|m| Match {
                idx_a: m.idx_b,
                idx_b: m.idx_a,
                score: m.score,
            })
            .collect();
        matches.sort_by_key(|m| m.idx_a);
        MatchSet {
            frame_a: self.frame_b.clone(),
            frame_b: self.frame_a.clone(),
            matches,
        }
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        self.matches
            .iter()
            .all(|m| seen_a.insert(m.idx_a) && seen_b.insert(m.idx_b))
    }

    /// Map from A's keypoint index to B's.
    pub fn lookup(&self) -> HashMap<usize, usize> {
        self.matches.iter().map(|m| (m.idx_a, m.idx_b)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    #[default]
    DescriptorMnn,
    PrecomputedFile,
    SyntheticOracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherConfig {
    pub kind: MatcherKind,
    /// Lowe ratio on descriptor distances.
    pub ratio: f64,
    /// Minimum cosine similarity.
    pub min_score: f64,
    /// Probability that the oracle rewires a match to a wrong keypoint.
    pub outlier_rate: f64,
    pub seed: u64,
    /// Directory holding `<A>__<B>.csv` files for [`MatcherKind::PrecomputedFile`].
    pub match_dir: Option<PathBuf>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            kind: MatcherKind::DescriptorMnn,
            ratio: 0.9,
            min_score: 0.7,
            outlier_rate: 0.0,
            seed: 0,
            match_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MatchingError {
    #[error("frame `{0}` has no local descriptors")]
    MissingDescriptors(String),
    #[error("frame `{0}` has no scene-point ids")]
    MissingPointIds(String),
    #[error("no precomputed match file for `{a}` and `{b}` in {dir}")]
    MissingMatchFile { a: String, b: String, dir: PathBuf },
    #[error("{path}: {msg}")]
    InvalidMatchFile { path: PathBuf, msg: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Matches frame A against frame B with the configured matcher.
pub fn match_frames(a: &Frame, b: &Frame, cfg: &MatcherConfig) -> Result<MatchSet, MatchingError> {
    if a.keypoints.is_empty() || b.keypoints.is_empty() {
        return Ok(MatchSet::empty(&a.frame_id, &b.frame_id));
    }
    let matches = match cfg.kind {
        MatcherKind::DescriptorMnn => {
            let da = a
                .descriptors
                .as_ref()
                .ok_or_else(|| MatchingError::MissingDescriptors(a.frame_id.clone()))?;
            let db = b
                .descriptors
                .as_ref()
                .ok_or_else(|| MatchingError::MissingDescriptors(b.frame_id.clone()))?;
            mutual_nearest_neighbors(da, db, cfg.ratio, cfg.min_score)
        }
        MatcherKind::SyntheticOracle => {
            let mut set = MatchSet {
                frame_a: a.frame_id.clone(),
                frame_b: b.frame_id.clone(),
                matches: oracle_matches(a, b)?,
            };
            if cfg.outlier_rate > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(cfg.seed, &a.frame_id, &b.frame_id));
                inject_outliers(&mut set, b.keypoints.len(), cfg.outlier_rate, &mut rng);
            }
            return Ok(set);
        }
        MatcherKind::PrecomputedFile => {
            let dir = cfg.match_dir.as_deref().ok_or_else(|| MatchingError::MissingMatchFile {
                a: a.frame_id.clone(),
                b: b.frame_id.clone(),
                dir: PathBuf::new(),
            })?;
            let set = load_match_pair(dir, &a.frame_id, &b.frame_id)?;
            check_indices(&set, a.keypoints.len(), b.keypoints.len(), dir)?;
            return Ok(set);
        }
    };
    Ok(MatchSet {
        frame_a: a.frame_id.clone(),
        frame_b: b.frame_id.clone(),
        matches,
    })
}

/// Mutual nearest neighbors by cosine similarity, keeping pairs that pass the
/// ratio test in both directions and reach `min_score`. Output is sorted by A's index.
pub fn mutual_nearest_neighbors(a: &Descriptors, b: &Descriptors, ratio: f64, min_score: f64) -> Vec<Match> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Vec::new();
    }
    let mut sim = vec![0.0; na * nb];
    for (i, ra) in a.rows().enumerate() {
        for (j, rb) in b.rows().enumerate() {
            sim[i * nb + j] = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
        }
    }
    let best_of = |n: usize, get: &dyn Fn(usize) -> f64| -> (usize, f64, Option<f64>) {
        let mut best = (0, f64::NEG_INFINITY);
        let mut second = None::<f64>;
        for k in 0..n {
            let s = get(k);
            if s > best.1 {
                if best.1 > f64::NEG_INFINITY {
                    second = Some(second.map_or(best.1, |v: f64| v.max(best.1)));
                }
                best = (k, s);
            } else {
                second = Some(second.map_or(s, |v| v.max(s)));
            }
        }
        (best.0, best.1, second)
    };
    let distance = |s: f64| (2.0 - 2.0 * s).max(0.0).sqrt();
    let passes_ratio = |best: f64, second: Option<f64>| match second {
        None => true,
        Some(s2) => distance(best) < ratio * distance(s2),
    };

    let from_b: Vec<(usize, f64, Option<f64>)> = (0..nb)
        .map(|j| best_of(na, &|i| sim[i * nb + j]))
        .collect();
    let mut out = Vec::new();
    for i in 0..na {
        let (j, s, second) = best_of(nb, &|j| sim[i * nb + j]);
        let (back, _, second_b) = from_b[j];
        if back == i && s >= min_score && passes_ratio(s, second) && passes_ratio(s, second_b) {
            out.push(Match {
                idx_a: i,
                idx_b: j,
                score: s.clamp(0.0, 1.0),
            });
        }
    }
    out
}

/// Pairs of keypoints observing the same scene point.
pub fn oracle_matches(a: &Frame, b: &Frame) -> Result<Vec<Match>, MatchingError> {
    let ids_a = a
        .point_ids
        .as_ref()
        .ok_or_else(|| MatchingError::MissingPointIds(a.frame_id.clone()))?;
    let ids_b = b
        .point_ids
        .as_ref()
        .ok_or_else(|| MatchingError::MissingPointIds(b.frame_id.clone()))?;
    let index_b: HashMap<u64, usize> = ids_b
        .iter()
        .enumerate()
        .filter_map(|(j, id)| id.map(|id| (id, j)))
        .collect();
    Ok(ids_a
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            let j = *index_b.get(&(*id)?)?;
            Some(Match {
                idx_a: i,
                idx_b: j,
                score: 1.0,
            })
        })
        .collect())
}

/// Rewires each match with probability `rate` to a keypoint of B that no other
/// match uses, keeping the set one-to-one. Returns the inlier mask (false for
/// rewired matches). A match stays an inlier when B has no unused keypoint left.
pub fn inject_outliers<R: Rng>(set: &mut MatchSet, nb: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    let mut used = vec![false; nb];
    for m in &set.matches {
        used[m.idx_b] = true;
    }
    let mut free: Vec<usize> = (0..nb).filter(|j| !used[*j]).collect();
    let mut mask = vec![true; set.matches.len()];
    for (m, inlier) in set.matches.iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() >= rate || free.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..free.len());
        let new_b = free.swap_remove(pick);
        free.push(m.idx_b);
        m.idx_b = new_b;
        *inlier = false;
    }
    mask
}

/// Deterministic per-pair seed (FNV-1a over the pair name, mixed with `seed`).
pub fn pair_seed(seed: u64, a: &str, b: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in a.bytes().chain(*b"__").chain(b.bytes()) {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn match_file_name(a: &str, b: &str) -> String {
    format!("{a}__{b}.csv")
}

pub fn read_match_file(path: &Path, a: &str, b: &str) -> Result<MatchSet, MatchingError> {
    let t = Table::read(path)?;
    t.expect_header(&["idxA", "idxB", "score"])?;
    let mut matches = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let score = t.f64_at(*line, row, 2)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(t.malformed(*line, format!("score {score} outside [0, 1]")).into());
        }
        matches.push(Match {
            idx_a: t.usize_at(*line, row, 0)?,
            idx_b: t.usize_at(*line, row, 1)?,
            score,
        });
    }
    let set = MatchSet {
        frame_a: a.to_owned(),
        frame_b: b.to_owned(),
        matches,
    };
    if !set.is_one_to_one() {
        return Err(MatchingError::InvalidMatchFile {
            path: path.to_path_buf(),
            msg: "matches are not one-to-one".into(),
        });
    }
    Ok(set)
}

pub fn write_match_file(dir: &Path, set: &MatchSet) -> Result<(), MatchingError> {
    let mut out = CsvOut::create(&dir.join(match_file_name(&set.frame_a, &set.frame_b)), &["idxA", "idxB", "score"])?;
    for m in &set.matches {
        out.row([m.idx_a.to_string(), m.idx_b.to_string(), fmt_f64(m.score)])?;
    }
    Ok(out.finish()?)
}

/// Loads `<a>__<b>.csv`, or `<b>__<a>.csv` swapped.
pub fn load_match_pair(dir: &Path, a: &str, b: &str) -> Result<MatchSet, MatchingError> {
    let direct = dir.join(match_file_name(a, b));
    if direct.is_file() {
        return read_match_file(&direct, a, b);
    }
    let reverse = dir.join(match_file_name(b, a));
    if reverse.is_file() {
        return Ok(read_match_file(&reverse, b, a)?.swapped());
    }
    Err(MatchingError::MissingMatchFile {
        a: a.to_owned(),
        b: b.to_owned(),
        dir: dir.to_path_buf(),
    })
}

fn check_indices(set: &MatchSet, na: usize, nb: usize, dir: &Path) -> Result<(), MatchingError> {
    if let Some(m) = set.matches.iter().find(|m| m.idx_a >= na || m.idx_b >= nb) {
        return Err(MatchingError::InvalidMatchFile {
            path: dir.join(match_file_name(&set.frame_a, &set.frame_b)),
            msg: format!("index pair ({}, {}) out of range", m.idx_a, m.idx_b),
        });
    }
    Ok(())
}
