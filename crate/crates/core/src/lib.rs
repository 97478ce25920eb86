//! Algorithmic core of the leafscope pipeline.
//!
//! Everything in this crate is pure computation over in-memory values: image
//! preprocessing and augmentation, stratified splitting, a small NHWC tensor
//! graph with reverse-mode gradients, the backbone registry, the
//! classification head, the two-phase trainer and the evaluation metrics.
//! Filesystem access, image decoding, file formats and the CLI live in the
//! `leafscope` companion crate.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod backbone;
pub mod classifier;
pub mod dataset;
mod error;
pub mod head;
pub mod imgproc;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod stream;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
