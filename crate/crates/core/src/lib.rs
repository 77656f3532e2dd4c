//! Deterministic simulator of federated fine-tuning with noisy-projection
//! robust aggregation.
//!
//! The crate is `no_std` (with `alloc`): every operation is a pure function of
//! its inputs and an explicit [`tensorlab::SeededRng`]. File formats, the CLI
//! and experiment sweeps live in the `fedgnp` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod error;
pub mod federation;
pub mod indicators;
pub mod model;
pub mod tensorlab;

pub use error::{Error, Result};
