//! Tri-plane selective-scan change detection.
//!
//! A from-scratch implementation of a bi-temporal change-detection network
//! built on selective state-space scans that run over the HW, HC and WC
//! planes of a feature map. The crate provides:
//!
//! - a dense tensor type with reverse-mode autodiff ([`tensor`]),
//! - sequential and parallel selective-scan kernels ([`scan`]),
//! - the tri-plane scan block and its plane orderings ([`ssm3d`]),
//! - the bi-temporal interaction module ([`sim`]) and the multi-branch
//!   decoder block ([`mbfem`]),
//! - the full siamese encoder/decoder model with checkpointing ([`model`]),
//! - losses, metrics, synthetic and on-disk data handling, and the
//!   train/eval/bench/ablate engine used by the CLI ([`train`]).

pub mod error;
pub mod fft;
pub mod scalar;
pub mod scan;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
