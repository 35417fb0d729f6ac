//! Self-supervised representation learning for single-lead ECG.
//!
//! A multi-task network is pre-trained to recognise which of six signal
//! transformations (or none) was applied to a 10 s ECG window. Its
//! convolutional trunk is then copied, frozen, and reused by a small dense
//! classifier for binary affect targets (arousal, valence, stress).
//!
//! Layout:
//! - [`signal`]: baseline-wander filter, decimation, windowing, synthetic ECG, recording I/O
//! - [`transforms`]: the pretext transformations and pseudo-labelled dataset builder
//! - [`nn`]: tensors, layer kernels with hand-written backward passes, losses, Adam, gradcheck
//! - [`models`]: the pretext and emotion architectures, weight transfer, model files
//! - [`training`]: training loops, cross-validation, metrics, reports
//! - [`config`]: run configuration files
//! - [`cli`]: subcommand implementations behind the `ecgssl` binary

pub mod cli;
pub mod config;
pub mod error;
pub mod models;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
