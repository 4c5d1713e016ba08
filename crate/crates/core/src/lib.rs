//! Pure, allocation-only core of the experiment harness.
//!
//! Everything here is deterministic given an [`rng::RngStream`]: dataset
//! synthesis, hold-out / k-fold partitioning, the hypothesis tests used to
//! pick a split ratio, image augmentation kernels, a small named-layer CNN
//! with manual backpropagation, optimizers, schedules and the training loop.
//! File formats, the campaign driver and the CLI live in the `cvharness`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod dataset;
mod error;
pub mod harness;
pub mod image;
mod math;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod split;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
