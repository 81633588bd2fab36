//! Learning maximum-margin nearest-neighbor decoders from channel samples.

pub mod channel;
pub mod decoder;
pub mod error;
pub mod linalg;
pub mod margin_additive;
pub mod margin_nonlinear;
mod partition;
pub mod rng;
pub mod solver;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
