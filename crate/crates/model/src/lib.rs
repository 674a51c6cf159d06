//! A small byte-level MoE transformer with hand-written backpropagation,
//! analytic expert Jacobians and activation capture for geometric analysis.
//!
//! Everything numeric is generic over [`Scalar`]; training normally runs in
//! `f32` ([`Model32`]) and gradient checks in `f64` ([`Model64`]).

pub mod activation;
pub mod capture;
pub mod checkpoint;
pub mod config;
pub mod expert;
pub mod routing;
pub mod train;
pub mod transformer;

use moegeom_core::interchange::InterchangeError;
use moegeom_core::pipeline::PipelineError;
use moegeom_core::GeomError;

pub use capture::{capture_corpus, CaptureBuffer, CaptureOptions};
pub use config::{ModelConfig, RouterKind};
pub use expert::{ExpertMlp, MoeLayer};
pub use moegeom_core::Scalar;
pub use train::{train, Adam, TrainOutcome};
pub use transformer::MoeTransformer;

pub type Model32 = MoeTransformer<f32>;
pub type Model64 = MoeTransformer<f64>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds block size {block_size}")]
    SequenceTooLong { len: usize, block_size: usize },
    #[error("token {token} at position {position} is outside the vocabulary of {vocab}")]
    InvalidToken {
        token: usize,
        position: usize,
        vocab: usize,
    },
    #[error("corpus has {len} bytes, need at least {needed}")]
    CorpusTooShort { len: usize, needed: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}
