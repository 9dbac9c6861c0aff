//! Laboratory for digital joint coding-modulation.
//!
//! QAM modulation is treated as a clipped, scaled quantizer. The crate
//! builds the quantizer and channel, the uniform-noise relaxation used for
//! training, quadrature oracles comparing the two, an entropy model with
//! rate-matched masking, a small reverse-mode differentiation engine, and a
//! toy end-to-end pipeline trained in three phases.

pub mod channel;
pub mod constellation;
pub mod diff;
pub mod entropy;
pub mod error;
pub mod modem;
pub mod oracle;
pub mod quad;
pub mod rate;
pub mod rng;
pub mod toy;

pub use error::{Error, Result};
