//! Block-scaled quantization toolkit built around dual-stage residual
//! compensation.
//!
//! The crate provides exact software codecs for the FP4/FP6/FP8 minifloat
//! element encodings and their block-scale encodings, round-to-nearest
//! block quantization for the NVFP4, MXFP4, MXFP6, MXFP8 and INT4 formats,
//! calibration-driven outlier channel selection, activation augmentation
//! with quantized residual channels, a deterministic reference GEMM that
//! realizes the widened single-call equivalence, rotation and smoothing
//! baselines, and worst-case error-bound verification.
//!
//! With the default `parallel` feature the data-parallel loops (row
//! quantization, GEMM tiles, Monte Carlo sweeps) run on rayon; disabling the
//! feature yields a sequential build that produces identical results.

pub mod analysis;
pub mod baselines;
pub mod blockquant;
pub mod calibration;
pub mod error;
pub mod formats;
pub mod gemm;
pub mod matrix;
pub mod minifloat;
mod par;
pub mod pipeline;
pub mod tensorio;
pub mod verify;

pub use blockquant::{Layout, QuantizedTensor};
pub use calibration::CalibrationProfile;
pub use error::{Error, Result};
pub use formats::FormatSpec;
pub use matrix::Matrix;
