//! Desk-scale few-shot voice cloning for Nepali.
//!
//! The pipeline has three learned stages, each trained from scratch here:
//!
//! * [`encoder`]: a stacked-LSTM d-vector speaker encoder trained with the
//!   generalized end-to-end (GE2E) softmax loss.
//! * [`synth`]: a character-level attention sequence-to-sequence mel
//!   synthesizer conditioned on a speaker embedding.
//! * [`vocoder`]: a WaveRNN-style autoregressive vocoder over mu-law classes.
//!
//! Around them sit the audio frontend ([`dsp`]), Devanagari text
//! normalization ([`textnorm`]), dataset manifests ([`corpus`]) and the
//! evaluation metrics ([`eval`]). All learned components share the small
//! reverse-mode autodiff tape in [`nn`].

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod dsp;
pub mod encoder;
mod error;
pub mod eval;
pub mod nn;
pub mod synth;
pub mod synthetic;
pub mod textnorm;
pub mod vocoder;

pub use error::{Error, Result};
