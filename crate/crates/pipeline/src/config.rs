//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use quanv::classifier::TrainConfig;
use quanv::data::{sample_seed, SignalRecipe, SIGNAL_LEN};
use quanv::quanvolution::{hierarchy_shapes, LevelGeometry};
use quanv::textfmt::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Reduced dimension used when a level's embedding is large enough to need PCA
/// and no explicit `pca_dims` is given.
pub const DEFAULT_PCA_DIMS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub workspace: PathBuf,
    pub data: DataConfig,
    pub levels: Vec<LevelConfig>,
    pub classifier: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub m: usize,
    pub n_train: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub healthy: SignalRecipe,
    pub faulty: SignalRecipe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelConfig {
    /// Window length, which is also the filter's qubit count.
    pub window: usize,
    pub stride: usize,
    pub pool_size: usize,
    /// Inclusive `[min, max]` template repetitions.
    pub layers: [usize; 2],
    pub k: usize,
    pub pca_dims: Option<usize>,
    /// PCA is applied when `2^window` exceeds this and `pca_dims` is unset.
    pub pca_threshold: usize,
    pub pool_seed: u64,
    pub cluster_seed: u64,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            m: 299,
            n_train: 200,
            seed: 0,
            split_seed: 1,
            healthy: SignalRecipe::default_healthy(),
            faulty: SignalRecipe::default_faulty(),
        }
    }
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            window: 4,
            stride: 2,
            pool_size: 100,
            layers: [1, 3],
            k: 4,
            pca_dims: None,
            pca_threshold: 64,
            pool_seed: 11,
            cluster_seed: 12,
            pool_window: 2,
            pool_stride: 2,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            data: DataConfig::default(),
            levels: vec![
                LevelConfig::default(),
                LevelConfig {
                    pool_seed: 21,
                    cluster_seed: 22,
                    ..LevelConfig::default()
                },
            ],
            classifier: TrainConfig::default(),
        }
    }
}

impl LevelConfig {
    pub fn n_qubits(&self) -> usize {
        self.window
    }

    pub fn geometry(&self) -> LevelGeometry {
        LevelGeometry {
            window: self.window,
            stride: self.stride,
            k: self.k,
            pool_window: self.pool_window,
            pool_stride: self.pool_stride,
        }
    }

    /// PCA rank actually used for clustering, if any.
    pub fn effective_pca_dims(&self) -> Option<usize> {
        let d = 1usize << self.window.min(usize::BITS as usize - 1);
        match self.pca_dims {
            Some(r) => Some(r),
            None if d > self.pca_threshold => Some(DEFAULT_PCA_DIMS.min(self.pool_size).min(d)),
            None => None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces every seed with one derived from `n`. Derived seeds fit in
    /// 63 bits so the config stays representable in TOML.
    pub fn with_seed_override(mut self, n: u64) -> Self {
        let derive = |i: usize| sample_seed(n, i) >> 1;
        self.data.seed = derive(0);
        self.data.split_seed = derive(1);
        self.classifier.seed = derive(2);
        for (i, level) in self.levels.iter_mut().enumerate() {
            level.pool_seed = derive(10 + 2 * i);
            level.cluster_seed = derive(11 + 2 * i);
        }
        self
    }

    /// Checks everything that can be checked without running a circuit.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.m < 2 {
            return Err(PipelineError::config(format!("data.m = {} must be at least 2", d.m)));
        }
        if d.n_train == 0 || d.n_train >= d.m {
            return Err(PipelineError::config(format!(
                "data.n_train = {} must lie in 1..{}",
                d.n_train, d.m
            )));
        }
        for r in [&d.healthy, &d.faulty] {
            r.validate().map_err(|e| PipelineError::config(format!("data recipe: {e}")))?;
        }
        if self.levels.is_empty() {
            return Err(PipelineError::config("at least one level is required"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            let at = |msg: String| PipelineError::config(format!("level {}: {msg}", i + 1));
            if l.window == 0 || l.window > quanv::qsim::MAX_QUBITS {
                return Err(at(format!("window {} must lie in 1..={}", l.window, quanv::qsim::MAX_QUBITS)));
            }
            if l.k > l.pool_size {
                return Err(at(format!("K = {} exceeds pool_size = {}", l.k, l.pool_size)));
            }
            if l.layers[0] == 0 || l.layers[0] > l.layers[1] {
                return Err(at(format!("layers {:?} must be a non-empty range starting at 1 or more", l.layers)));
            }
            if let Some(r) = l.effective_pca_dims() {
                let max = l.pool_size.min(1 << l.window);
                if r == 0 || r > max {
                    return Err(at(format!("pca_dims {r} must lie in 1..={max}")));
                }
            }
        }
        let geometry: Vec<LevelGeometry> = self.levels.iter().map(LevelConfig::geometry).collect();
        hierarchy_shapes(1, SIGNAL_LEN, &geometry).map_err(|e| PipelineError::config(e.to_string()))?;
        self.classifier
            .validate()
            .map_err(|e| PipelineError::config(format!("classifier: {e}")))?;
        Ok(())
    }

    /// Length of the final feature vector.
    pub fn feature_len(&self) -> Result<usize> {
        let geometry: Vec<LevelGeometry> = self.levels.iter().map(LevelConfig::geometry).collect();
        let shapes = hierarchy_shapes(1, SIGNAL_LEN, &geometry).map_err(|e| PipelineError::config(e.to_string()))?;
        let (c, n) = shapes.last().copied().unwrap_or((1, SIGNAL_LEN));
        Ok(c * n)
    }

    /// Hash of everything except the workspace location.
    pub fn hash(&self) -> String {
        hash_json(&(&self.data, &self.levels, &self.classifier))
    }
}

pub(crate) fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("value serializes").as_bytes())
}
