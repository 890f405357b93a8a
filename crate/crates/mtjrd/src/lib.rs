//! File formats, pipeline wiring and command line around `mtjrd-core`.

// Comparisons are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod curves;
pub mod error;
pub mod fixtures;
pub mod image_io;
pub mod manifest;
pub mod pipeline;
pub mod responses;
pub mod rle;

pub use error::{Error, Result};
