//! Candidate selection: exhaustive cosine-similarity search over the
//! references' global descriptors.

use std::cmp::Ordering;

use crate::ingest::{norm, Frame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("descriptor part {0} has zero length")]
    ZeroPart(usize),
    #[error("descriptor of `{frame_id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        frame_id: String,
        expected: usize,
        found: usize,
    },
    #[error("fusion weights do not match the number of parts")]
    WeightCount,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub frame_id: String,
    /// Cosine similarity in `[-1, 1]`.
    pub score: f64,
}

/// Up to `k` references ordered by non-increasing similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
}

/// L2-normalizes each part, concatenates with equal weight, and re-normalizes.
pub fn fuse_descriptors(parts: &[&[f64]]) -> Result<Vec<f64>, RetrievalError> {
    fuse_weighted(parts, &vec![1.0; parts.len()])
}

/// Like [`fuse_descriptors`], scaling each normalized part by its weight before concatenation.
pub fn fuse_weighted(parts: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    if parts.len() != weights.len() {
        return Err(RetrievalError::WeightCount);
    }
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for (i, (part, w)) in parts.iter().zip(weights).enumerate() {
        let n = norm(part);
        if n == 0.0 || !n.is_finite() {
            return Err(RetrievalError::ZeroPart(i));
        }
        out.extend(part.iter().map(|v| v * w / n));
    }
    let n = norm(&out);
    if n == 0.0 {
        return Err(RetrievalError::ZeroPart(0));
    }
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The `k` references most similar to `query`; ties go to the smaller frame id.
pub fn top_k(
    query_id: &str,
    query: &[f64],
    references: &[(&str, &[f64])],
    k: usize,
) -> Result<CandidateSet, RetrievalError> {
    let mut scored = Vec::with_capacity(references.len());
    for (id, desc) in references {
        if desc.len() != query.len() {
            return Err(RetrievalError::DimensionMismatch {
                frame_id: (*id).to_owned(),
                expected: query.len(),
                found: desc.len(),
            });
        }
        scored.push(Candidate {
            frame_id: (*id).to_owned(),
            score: dot(query, desc).clamp(-1.0, 1.0),
        });
    }
    scored.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.frame_id.cmp(&b.frame_id),
        o => o,
    });
    scored.truncate(k);
    Ok(CandidateSet {
        query_id: query_id.to_owned(),
        candidates: scored,
    })
}

/// Model-free stand-in global descriptor: an L2-normalized histogram of
/// keypoint counts over a `cols × rows` grid of the image. Frames without
/// keypoints get the uniform vector.
pub fn grid_descriptor(frame: &Frame, cols: usize, rows: usize) -> Vec<f64> {
    let mut hist = vec![0.0; cols * rows];
    let k = &frame.intrinsics;
    for p in &frame.keypoints {
        let c = ((p.x / k.width * cols as f64) as usize).min(cols - 1);
        let r = ((p.y / k.height * rows as f64) as usize).min(rows - 1);
        hist[r * cols + c] += 1.0;
    }
    let n = norm(&hist);
    if n == 0.0 {
        let u = 1.0 / ((cols * rows) as f64).sqrt();
        return vec![u; cols * rows];
    }
    hist.iter_mut().for_each(|v| *v /= n);
    hist
}

/// Global descriptor of a frame: the stored one, or the grid stand-in.
pub fn global_descriptor(frame: &Frame) -> Vec<f64> {
    frame
        .global_descriptor
        .clone()
        .unwrap_or_else(|| grid_descriptor(frame, 8, 6))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn fusion_normalizes() {
        let a = [1.0, 0.0];
        assert_eq!(fuse_descriptors(&[&a]).unwrap(), vec![1.0, 0.0]);
        let f = fuse_descriptors(&[&[0.0, 2.0], &[3.0, 0.0]]).unwrap();
        assert!((norm(&f) - 1.0).abs() < 1e-15);
        assert!((norm(&f[..2]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((norm(&f[2..]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((dot(&f, &f) - 1.0).abs() < 1e-15);
        assert_eq!(fuse_descriptors(&[&a, &[0.0, 0.0]]), Err(RetrievalError::ZeroPart(1)));
    }

    #[test]
    fn exact_match_ranks_first() {
        let refs = [("a", &[1.0, 0.0][..]), ("b", &[0.0, 1.0][..])];
        let c = top_k("q", &[0.0, 1.0], &refs, 1).unwrap();
        assert_eq!(c.candidates[0].frame_id, "b");
        assert_eq!(c.candidates[0].score, 1.0);
        let c = top_k("q", &[0.0, 1.0], &refs, 10).unwrap();
        assert_eq!(c.candidates.len(), 2);
        assert!(top_k("q", &[0.0, 1.0, 0.0], &refs, 1).is_err());
    }

    #[test]
    fn ties_break_by_frame_id() {
        let refs = [("z", &[1.0, 0.0][..]), ("m", &[1.0, 0.0][..]), ("a", &[0.0, 1.0][..])];
        let c = top_k("q", &[1.0, 0.0], &refs, 3).unwrap();
        let ids: Vec<_> = c.candidates.iter().map(|c| c.frame_id.as_str()).collect();
        assert_eq!(ids, ["m", "z", "a"]);
    }

    #[test]
    fn matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let refs: Vec<(String, Vec<f64>)> = (0..100)
            .map(|i| (format!("r{i:03}"), random_unit(&mut rng, 16)))
            .collect();
        let q = random_unit(&mut rng, 16);
        let view: Vec<(&str, &[f64])> = refs.iter().map(|(i, d)| (i.as_str(), d.as_slice())).collect();
        let got = top_k("q", &q, &view, 10).unwrap();

        // Oracle: score every reference, then repeatedly extract the maximum.
        let mut pool: Vec<(String, f64)> = refs
            .iter()
            .map(|(id, d)| (id.clone(), d.iter().zip(&q).map(|(a, b)| a * b).sum()))
            .collect();
        for cand in &got.candidates {
            let best = pool
                .iter()
                .enumerate()
                .fold(0, |bi, (i, c)| if c.1 > pool[bi].1 { i } else { bi });
            let (id, _) = pool.remove(best);
            assert_eq!(cand.frame_id, id);
        }
    }

    #[test]
    fn grid_descriptor_is_unit() {
        let k = crate::geometry::CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100.0, 100.0).unwrap();
        let mut f = Frame::new("a", "c", k);
        assert!((norm(&grid_descriptor(&f, 4, 3)) - 1.0).abs() < 1e-15);
        f.keypoints = vec![nalgebra::Vector2::new(100.0, 100.0), nalgebra::Vector2::new(0.0, 0.0)];
        let g = grid_descriptor(&f, 4, 3);
        assert!((g[0] - 0.5f64.sqrt()).abs() < 1e-15 && (g[11] - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
