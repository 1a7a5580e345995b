//! Desk-scale federated learning: a deterministic synthetic classification
//! task, local SGD training, and pluggable server-side aggregation.
//!
//! The model family is multinomial logistic regression over Gaussian class
//! clusters — small enough for exact Shapley valuation and brute-force
//! oracles, while the wire format's padding knob still exercises multi-MB
//! encrypted payloads.

mod aggregate;
mod model;
mod task;
mod train;

pub use aggregate::{
    aggregate_fedadam, aggregate_fedavg, aggregate_fedavgm, fedavg_updates, AdamState, Aggregator,
    FedAdam, FedAvg, FedAvgM,
};
pub use model::{
    decode_frame, encode_model, encode_update, Frame, ModelParams, Update, FRAME_HEADER_LEN,
};
pub use task::{make_task, Dataset, Partition, Shard, TaskParams};
pub use train::{
    evaluate, local_train, local_train_with, softmax_probs, Objective, SoftmaxRegression,
    TrainConfig,
};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum FlError {
    #[error("invalid partition: {0}")]
    InvalidPartition(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("aggregation over an empty set")]
    EmptySet,
    #[error("malformed wire frame: {0}")]
    MalformedFrame(&'static str),
}
