//! Toy-scale trainer: embedding model, transform, AM-Softmax classifier on
//! PK batches, SGD with momentum.

pub mod am_softmax;
pub mod config;
pub mod model;
pub mod sampler;
pub mod trainer;

pub use am_softmax::{am_softmax_loss, AmSoftmaxClassifier, AmSoftmaxOutput};
pub use config::{lr_at, DeepSupervision, Method, TrainConfig};
pub use model::EmbedModel;
pub use sampler::{sample_pk, PkBatch, PkSampler};
pub use trainer::{
    forward_backward, mean_affinities, train, Diagnostics, EpochRecord, Sgd, StepOutput, TrainOutcome, TrainedModel,
    TrainingLog,
};
