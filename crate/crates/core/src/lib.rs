//! Unsupervised quanvolutional feature learning.
//!
//! Candidate parameterized circuits are simulated exactly, clustered by their
//! output distributions, and the members nearest to each centroid become the
//! filters of a quanvolution level. Stacked levels turn a 1-D signal into a
//! feature vector that a small dense network classifies.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the file formats and tolerances assume.

pub mod ansatz;
pub mod classifier;
pub mod cluster;
pub mod data;
pub mod error;
mod linalg;
pub mod qsim;
pub mod quanvolution;
pub mod scalar;
pub mod textfmt;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type QuantumState = qsim::QuantumState<f64>;
pub type QuantumState32 = qsim::QuantumState<f32>;
pub type GateOp = qsim::GateOp<f64>;
pub type Circuit = qsim::Circuit<f64>;
pub type CandidatePool = ansatz::CandidatePool<f64>;
pub type KMeansResult = cluster::KMeansResult<f64>;
pub type PcaModel = cluster::PcaModel<f64>;
pub type Signal = quanvolution::Signal<f64>;
pub type FeatureMap = quanvolution::FeatureMap<f64>;
pub type QuanvLayerConfig = quanvolution::QuanvLayerConfig<f64>;
pub type MlpModel = classifier::MlpModel<f64>;
pub type Normalizer = classifier::Normalizer<f64>;
