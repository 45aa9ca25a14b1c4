//! Self-training experiments for small sequence-to-sequence models.
//!
//! The crate provides the full stack needed to study classic and noisy
//! self-training on desk-scale generation tasks:
//!
//! - [`model`]: a single-layer LSTM encoder–decoder with dropout,
//!   label-smoothed cross-entropy and analytic gradients (f64 throughout).
//! - [`optim`] / [`train`]: Adam with warmup + inverse-square-root decay,
//!   global-norm clipping, and a deterministic mini-batch training loop with
//!   validation-loss checkpoint selection.
//! - [`decode`]: beam search, ancestral sampling and greedy decoding.
//! - [`noise`]: input perturbations (token drop/blank/local-shuffle and
//!   operand swap) used to build noisy self-training.
//! - [`selftrain`]: pseudo-labeling, confidence selection, pseudo-training,
//!   fine-tuning and the multi-iteration self-training loop.
//! - [`toysum`]: the two-integer sum benchmark with its error, smoothness and
//!   symmetry metrics and error heat maps.
//!
//! Everything is deterministic given the seeds carried in the relevant specs;
//! see the individual modules for what each seed controls.

pub mod checkpoint;
pub mod data;
pub mod decode;
pub mod error;
pub mod model;
pub mod noise;
pub mod optim;
pub mod selftrain;
pub mod seeds;
pub mod toysum;
pub mod train;
pub mod vocab;

pub use data::{Batch, Dataset, ParallelExample, Sequence};
pub use error::{Error, Result};
pub use model::{init_params, ModelConfig, ModelParams};
pub use vocab::Vocabulary;
