//! Run configuration files.

use std::path::Path;

use anyhow::{Context, Result};
use rtcnet::clustering::{ClusterParams, MergeParams};
use rtcnet::model::TrainConfig;
use rtcnet::pipeline::Clustering;
use rtcnet::preprocess::CropConfig;
use serde::{Deserialize, Serialize};

/// The shipped defaults, compiled in so the binary runs without a config.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub static_threshold_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub roc_thresholds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preprocess: PreprocessSection,
    pub crop: CropConfig,
    pub train: TrainConfig,
    pub clustering: ClusterParams,
    pub merge: MergeParams,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::parse(DEFAULT_CONFIG).context("built-in default config"),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        anyhow::ensure!(
            self.preprocess.static_threshold_mps >= 0.0,
            "static_threshold_mps must be non-negative"
        );
        anyhow::ensure!(self.eval.roc_thresholds >= 2, "roc_thresholds must be at least 2");
        self.crop.validate()?;
        self.train.validate()?;
        self.clustering.validate()?;
        self.merge.validate()?;
        Ok(())
    }

    pub fn clustering(&self) -> Clustering {
        Clustering {
            params: self.clustering,
            merge: self.merge,
        }
    }
}

/// A clustering parameter file for `cluster-compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFile {
    pub clustering: ClusterParams,
    #[serde(default)]
    pub merge: MergeParams,
}

impl ClusterFile {
    pub fn load(path: &Path) -> Result<Clustering> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let f: ClusterFile = toml::from_str(&text).with_context(|| format!("cluster parameters {}", path.display()))?;
        f.clustering.validate()?;
        f.merge.validate()?;
        Ok(Clustering {
            params: f.clustering,
            merge: f.merge,
        })
    }
}
