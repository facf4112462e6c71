//! Core numerics for erasure-based, group-level out-of-distribution detection.
//!
//! An image is split into a kept surround and an erased patch. A small
//! convolutional auto-encoder (the uncertainty estimation network) reads the
//! surround and emits a per-pixel discretized mixture-of-logistics over the
//! erased pixels. The per-image generation loss, in bits per sub-pixel, is the
//! detection score. Groups of test scores are compared against the
//! in-distribution score density with a Gaussian KDE and a Monte-Carlo KL
//! estimate. A histogram conditional-entropy estimator provides a
//! model-free score for the same pipeline.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only
//! switches the float intrinsics and the GEMM kernels to their std-backed,
//! runtime-dispatched versions.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod conv;
pub mod detect;
pub mod dml;
pub mod entropy;
pub mod erasing;
mod error;
pub mod image;
pub mod metrics;
pub mod ops;
mod real;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod uen;

pub use error::{Error, FormatError, Result};
pub use real::Real;
pub use tensor::Tensor;
