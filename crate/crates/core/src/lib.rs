//! Confidence-aware audio-visual quality assessment.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: `f64` tensors, a reverse-mode tape, Adam, gradient checking.
//! - [`confidence`]: visual confidence from artifact probabilities and audio
//!   confidence from a speech-quality cue.
//! - [`mixer`]: the confidence-gated channel-attention mixer.
//! - [`model`]: end-to-end assembly, composite loss, training, checkpoints.
//! - [`metrics`]: PLCC/SROCC, four-parameter logistic mapping, paired tests.
//! - [`synth`]: asymmetric-distortion data generator and dataset files.
//! - [`harness`]: experiment drivers and CSV reports used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod confidence;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
