//! Learner substrate shared by both trainers.

pub mod bandit;
pub mod checkpoint;
pub mod critics;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod replay;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::EnvError;

pub use bandit::ToyBandit;
pub use critics::{Critics, TdLosses};
pub use mlp::{Activation, Mlp, MlpCache};
pub use optim::Adam;
pub use policy::GaussianPolicy;
pub use replay::ReplayBuffer;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum CrlError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("requested {requested} samples, buffer holds {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("KL divergence {kl} exceeds 10x the radius {eps_kl}")]
    KlDivergenceBlowup { kl: f64, eps_kl: f64 },
    #[error("degenerate variational weights: {0}")]
    DegenerateWeights(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Seeds an independent stream for `worker` from the run's root seed.
pub fn worker_rng(root_seed: u64, worker: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(root_seed);
    rng.set_stream(worker + 1);
    rng
}

/// What a learner sees of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStep {
    pub next: Vec<f64>,
    pub r: f64,
    pub c: f64,
    pub done: bool,
    pub fuel_g: f64,
    pub soc: f64,
}

/// Episodic constrained environment with a scalar continuous action.
pub trait ConstrainedEnv {
    fn observation_dim(&self) -> usize;
    fn action_range(&self) -> (f64, f64);
    fn horizon(&self) -> usize;
    fn reset_features(&mut self, seed: u64) -> Vec<f64>;
    fn step_features(&mut self, action: f64) -> Result<FeatureStep, EnvError>;
}

/// Replay-buffer entry in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: f64,
    pub r: f64,
    pub c: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}
