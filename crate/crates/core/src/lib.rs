//! Multimodal (speech + text) emotion recognition toolkit.
//!
//! The crate covers the whole path from waveforms to evaluation reports:
//! log-mel front-end and spectrogram masking, a small reverse-mode autodiff
//! core, a ResNet-style speech classifier with statistics pooling and
//! speaker-ID transfer, a compact transformer text classifier, score-level
//! late fusion, and a leave-one-session-out evaluation harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod fusion;
pub mod nn;
pub mod probe;
pub mod speech;
pub mod text;

pub use error::{Error, Result};
