//! Distributed source coding of dithered, quantized random projections.
//!
//! The encoder measures a source with a fast random projection, quantizes the
//! measurements and transmits, per bitplane, either nothing, the raw bits, or
//! an LDPC syndrome whose rate follows from the predicted bit-flip
//! probability. The decoder predicts the measurements from side information,
//! recovers bitplanes from least to most significant with belief propagation,
//! and reconstructs the source with weighted total variation.

pub mod analysis;
pub mod bitplane_codec;
pub mod coding_theory;
pub mod error;
pub mod ldpc;
pub mod measurement;
pub mod par;
pub mod pipeline;
pub mod prediction;
pub mod reconstruction;

pub use error::{Error, Result};
