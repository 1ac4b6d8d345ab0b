//! Spectral feature transformation for embedding retrieval.
//!
//! A mini-batch of embeddings is viewed as a graph whose edges are
//! `exp(cos/σ)` affinities. Row-normalizing the affinities gives a random
//! walk, and multiplying its transition matrix with the features moves every
//! sample toward its similarity-weighted neighbourhood. The crate provides:
//!
//! - [`sft`]: affinity, transition matrix, the transform and its gradient;
//! - [`spectral`]: cut, volume, Ncut, stationary distribution, escape
//!   probabilities and the supervised Ncut loss;
//! - [`train`]: a small embedding model trained with AM-Softmax on PK
//!   batches, with the transform and shared-classifier deep supervision;
//! - [`retrieval`]: ranking, CMC/mAP evaluation, top-n refinement and a
//!   k-reciprocal re-ranking comparator;
//! - [`experiment`]: seeded ablation and sensitivity sweeps on synthetic data;
//! - embedding/manifest file formats and a synthetic data generator.

pub mod error;
pub mod experiment;
pub mod features;
pub mod gradcheck;
pub mod manifest;
pub mod matrix;
pub mod partition;
pub mod retrieval;
pub mod rng;
pub mod sft;
pub mod spectral;
pub mod synthetic;
pub mod train;

pub use error::{Result, SftError};
pub use features::{load_features, save_features, FeatureMatrix};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, SampleRecord, Split};
pub use matrix::Matrix;
pub use partition::Partition;
pub use retrieval::{evaluate, rank, sft_refine, EvalReport, RankingList, RetrievalSet};
pub use rng::PortableRng;
pub use sft::{affinity, sft_backward, sft_transform, transition, AffinityMatrix, StochasticMatrix};
pub use synthetic::{generate_synthetic, SyntheticSpec, Topology};
pub use train::{train, TrainConfig};
