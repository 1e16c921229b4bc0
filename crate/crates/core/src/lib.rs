//! Filler-word detection toolkit.
//!
//! Candidate filler regions are found where a voice activity detector fires
//! but an ASR transcript has no words; a small temporal-convolution
//! classifier then labels them. A transcription-free variant classifies
//! voiced regions frame by frame instead. The crate also carries the
//! synthetic mixing used to train the VAD, sound-event metrics, and the
//! bookkeeping behind a two-of-three annotation workflow.

pub mod annotation;
pub mod candidates;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod event;
pub mod nnet;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub mod transcripts;
pub mod vad;
