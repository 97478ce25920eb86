//! Dataset preparation, training, evaluation and reporting for leaf-disease
//! classifiers built on `leafscope-core`.

pub mod chart;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
pub use leafscope_core as core;
