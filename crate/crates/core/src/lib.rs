//! Centralized and distributed weighted-prediction-error speech
//! dereverberation over a simulated network of single-microphone nodes.
//!
//! The crate covers the whole chain: image-method room simulation, STFT
//! analysis, single- and multi-channel WPE, DANSE₁-based distributed WPE
//! with a round-based message simulator, objective quality measures, and
//! closed-form transmission and operation counts.

pub mod complexity;
pub mod danse;
pub mod error;
pub mod metrics;
pub mod netsim;
pub mod pipeline;
pub mod room;
pub mod signal;
pub mod stft;
pub mod wpe;

pub use error::{Error, Result};
