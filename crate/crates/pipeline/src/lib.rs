//! Experiment pipeline for quanvolutional feature learning.
//!
//! Stages: `generate` writes the dataset and split, `learn-filters` builds a
//! filter bank per level, `extract` runs the quanvolution hierarchy over every
//! sample and caches the features, and `train` fits the dense head on those
//! features. Everything lives under one workspace directory.

pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

pub use config::{DataConfig, ExperimentConfig, LevelConfig};
pub use error::{PipelineError, Result};
pub use stages::{
    metrics_csv, ExtractOutcome, GenerateOutcome, LearnOutcome, Pipeline, RunManifest, RunOutcome, TrainOutcome,
    METRICS_HEADER,
};
pub use workspace::Workspace;
