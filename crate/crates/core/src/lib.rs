//! Gated multimodal fusion head trained on precomputed, frozen image/text
//! embedding pairs.
//!
//! The crate is organised bottom-up:
//!
//! - [`embedding_store`]: the `GCEB` embedding file format, batching and the
//!   synthetic dataset generator.
//! - [`nn_core`]: dense-layer kernels with hand-written backward passes and a
//!   finite-difference gradient checker.
//! - [`model`]: the averaging baseline and the gated fusion model.
//! - [`objective`]: cross-entropy, cosine alignment and their combination.
//! - [`optim`]: AdamW, warmup + cosine learning-rate schedule, gradient clipping.
//! - [`metrics`]: AUROC and accuracy.
//! - [`trainer`]: the training loop, evaluation and checkpoints.
//! - [`gate_analysis`]: per-example gate statistics.
//! - [`cli`]: the `gatedclip` command-line front end.

// Validation uses `!(x > bound)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the math in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod embedding_store;
pub mod error;
pub mod gate_analysis;
pub mod metrics;
pub mod model;
pub mod nn_core;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
