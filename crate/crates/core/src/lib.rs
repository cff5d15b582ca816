//! Monaural source separation with a skip-filtering recurrent encoder-decoder.
//!
//! The pipeline runs from a time-domain mixture to a time-domain source
//! estimate: STFT analysis ([`dsp`]), overlapping context segments
//! ([`segment`]), a bidirectional GRU encoder with GRU decoder whose output
//! masks the input ([`layers`]), highway enhancement, and an α-power Wiener
//! mask on the mixture ([`separation`]). Training ([`train`]) uses a
//! tape-based reverse-mode differentiator ([`autodiff`]); [`metrics`] scores
//! estimates with SDR and SIR.

pub mod audio;
pub mod autodiff;
pub mod config;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod fixture;
pub mod layers;
pub mod metrics;
pub mod segment;
pub mod separation;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
