//! Segmentation network built from multi-frequency multi-scale attention
//! blocks and an ensemble sub-decoder, on a small f64 tape autodiff.
//!
//! Layout: [`tensor`] holds the arrays, kernels and tape; [`freq`], [`mfmsa`]
//! and [`esdm`] are the decoder pieces; [`network`] wires them to a five-stage
//! encoder. [`losses`], [`metrics`], [`data`] and [`train`] cover the training
//! loop, [`analysis`] the dataset statistics and the weight census.

pub mod analysis;
pub mod config;
pub mod data;
pub mod edt;
pub mod error;
pub mod esdm;
pub mod freq;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mfmsa;
pub mod network;
pub mod nn;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
