//! Aggregate-feature policy trained with PPO.

mod net;
mod ppo;
mod train;

pub use net::{
    log_softmax, FeatureScale, ForwardCache, Layout, PolicyNet, DEFAULT_HIDDEN, INPUT_DIM,
};
pub use ppo::{
    compute_gae, loss_and_grad, ppo_update, Adam, AdamConfig, Batch, LossParts, PpoConfig,
    UpdateStats,
};
pub use train::{
    collect_rollouts, train_agg, write_history_csv, ActionMode, AggRouter, IterationStats,
    Rollouts, TrainConfig, TrainRun,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("non-finite policy input")]
    NonFiniteInput,
    #[error("non-finite gradient; update aborted")]
    NonFiniteGradient,
    #[error("{rewards} rewards but {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("simulation failed: {0}")]
    Sim(String),
    #[error("i/o: {0}")]
    Io(String),
}
