//! Selective embedding for multi-sensor time series.
//!
//! The crate turns simultaneously-sampled sensor recordings into labeled
//! FFT-magnitude datasets under three loading strategies:
//!
//! - **single**: every segment of one chosen sensor, one input channel;
//! - **parallel**: the simultaneous segments of all `m` sensors stacked as `m`
//!   input channels;
//! - **selective**: one input channel whose segments alternate between
//!   sensors, so the example count matches single loading while the model
//!   still sees every sensor.
//!
//! A small double-precision 1-D CNN ([`nn`]) is trained on each dataset and
//! the [`bench`] module compares accuracy and wall time across strategies.
//! [`synth`] generates labeled multi-domain recordings for desk-scale runs.

pub mod bench;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod loaders;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
