//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! [paths]
//! dataset = "data/sim"
//! output = "out"
//!
//! [retrieval]
//! k = 1
//!
//! [matching]
//! kind = "descriptor_mnn"   # or "precomputed_file", "synthetic_oracle"
//! ratio = 0.9
//! min_score = 0.7
//!
//! [triangulation]
//! t_min = 0.3
//! theta_min_deg = 10.0
//!
//! [pnp]
//! min_inliers = 10
//!
//! [pgo]
//! mode = "prior_augmented"  # or "paper_literal"
//! kernel = "huber"          # or "tukey", "none"
//!
//! [batch]
//! n = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matching::{MatcherConfig, MatcherKind};
use crate::pgo::PgoConfig;
use crate::pose_estimation::PnpConfig;
use crate::triangulation::TriangulationConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub kind: MatcherKind,
    pub ratio: f64,
    pub min_score: f64,
    /// Oracle matcher only.
    pub outlier_rate: f64,
    /// Oracle matcher only.
    pub seed: u64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        let m = MatcherConfig::default();
        Self {
            kind: m.kind,
            ratio: m.ratio,
            min_score: m.min_score,
            outlier_rate: m.outlier_rate,
            seed: m.seed,
        }
    }
}

impl MatchingConfig {
    pub fn matcher(&self, match_dir: Option<PathBuf>) -> MatcherConfig {
        MatcherConfig {
            kind: self.kind,
            ratio: self.ratio,
            min_score: self.min_score,
            outlier_rate: self.outlier_rate,
            seed: self.seed,
            match_dir,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub n: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { n: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub matching: MatchingConfig,
    pub triangulation: TriangulationConfig,
    pub pnp: PnpConfig,
    pub pgo: PgoConfig,
    pub batch: BatchConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::default().overlay(text)
    }

    /// Returns `self` with every key present in `text` replaced.
    pub fn overlay(&self, text: &str) -> Result<Self, ConfigError> {
        let over: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut base, over);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.overlay(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &'static str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, msg: msg.into() })
            }
        };
        check(self.retrieval.k >= 1, "retrieval.k", "must be at least 1")?;
        check(self.batch.n >= 2, "batch.n", "must be at least 2")?;
        check(
            self.matching.ratio > 0.0 && self.matching.ratio <= 1.0,
            "matching.ratio",
            "must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.matching.outlier_rate),
            "matching.outlier_rate",
            "must lie in [0, 1]",
        )?;
        check(self.triangulation.t_min >= 0.0, "triangulation.t_min", "must be non-negative")?;
        check(self.triangulation.max_reproj_px > 0.0, "triangulation.max_reproj_px", "must be positive")?;
        check(self.pnp.thresh_px > 0.0, "pnp.thresh_px", "must be positive")?;
        check(
            self.pnp.confidence > 0.0 && self.pnp.confidence < 1.0,
            "pnp.confidence",
            "must lie in (0, 1)",
        )?;
        check(self.pnp.max_iters >= 1, "pnp.max_iters", "must be at least 1")?;
        check(self.pgo.tol >= 0.0, "pgo.tol", "must be non-negative")?;
        check(self.pgo.kernel_threshold > 0.0, "pgo.kernel_threshold", "must be positive")?;
        check(
            self.pgo.sigma_t_m > 0.0 && self.pgo.sigma_r_deg > 0.0,
            "pgo.sigma_t_m / pgo.sigma_r_deg",
            "must be positive",
        )?;
        check(self.pgo.prior_sigma_scale > 0.0, "pgo.prior_sigma_scale", "must be positive")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgo::PgoMode;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.retrieval.k, 1);
        assert_eq!(c.batch.n, 10);
        assert_eq!(c.triangulation.t_min, 0.3);
        assert_eq!(c.triangulation.theta_min_deg, 10.0);
        assert_eq!(c.triangulation.max_reproj_px, 3.0);
        assert_eq!(c.pnp.thresh_px, 3.0);
        assert_eq!(c.pgo.mode, PgoMode::PriorAugmented);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overlay_replaces_only_given_keys() {
        let mut base = PipelineConfig::default();
        base.retrieval.k = 3;
        base.pnp.seed = 7;
        let c = base
            .overlay("[pnp]\nseed = 9\n[pgo]\nmode = \"paper_literal\"\n[matching]\nkind = \"synthetic_oracle\"")
            .unwrap();
        assert_eq!((c.retrieval.k, c.pnp.seed, c.pgo.mode), (3, 9, PgoMode::PaperLiteral));
        assert_eq!(c.matching.kind, MatcherKind::SyntheticOracle);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(PipelineConfig::from_toml("[pnp]\nbogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[batch]\nn = 1").is_err());
        assert!(PipelineConfig::from_toml("[retrieval]\nk = 0").is_err());
    }
}
