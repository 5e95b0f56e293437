//! Enterprise tax-risk grading with a hybrid of a dense static-attribute
//! encoder, a self-attention encoder over quarterly financial series, and an
//! autoencoder whose reconstruction error doubles as an anomaly signal.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`nn`]: dense `f64` tensors, layers with hand-written
//!   backward passes, Adam, finite-difference gradient checking.
//! - [`static_encoder`], [`temporal`], [`autoencoder`], [`fusion`]: the four
//!   model components, composed by [`model::HybridModel`].
//! - [`data`]: record schema, preprocessing, splitting, the synthetic
//!   generator and all file formats.
//! - [`train`], [`metrics`], [`baseline`], [`curve`]: training loop,
//!   evaluation, the logistic-regression baseline and loss-curve output.

pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod static_encoder;
pub mod temporal;
pub mod autoencoder;
pub mod fusion;
pub mod model;
pub mod baseline;
pub mod config;
pub mod curve;
pub mod data;
pub mod metrics;
pub mod train;
pub mod workflow;
