//! Multi-task just-recognizable-difference (JRD) toolkit.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation:
//! similarity metrics, JRD annotation from machine-vision responses, a
//! baseline JPEG codec with a per-macroblock quality-factor map, the
//! PSNR-guided QF search used for JRD-driven coding, a compact multi-branch
//! JRD predictor with hand-written backpropagation, and rate-accuracy
//! evaluation. File formats and the command line live in the `mtjrd` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// Comparisons are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod annotation;
pub mod codec;
pub mod error;
pub mod evaluation;
mod math;
pub mod metrics;
pub mod predictor;
pub mod synth;
pub mod types;
pub mod vcm;

pub use error::{Error, Result};
pub use types::{
    attribute_triplet, AttributeTriplet, BoundingBox, ImagePlane, JrdAnnotation, Keypoint,
    KeypointSet, Mask, Task, TaskOutput, TaskResponse, NUM_KEYPOINTS, NUM_LEVELS,
};
