//! Grant-free user activity detection for cell-free massive MIMO.
//!
//! The crate simulates the uplink pilot phase of a cell-free network
//! ([`scenario`], [`airlink`]), turns received frames into a real-valued
//! tensor of pilot-matched channel estimates ([`preprocess`]), and detects
//! active users either with a convolutional network trained from scratch
//! ([`neuralnet`]) or with a per-AP covariance maximum-likelihood baseline
//! fused across access points ([`covdet`]). [`evalkit`] scores detectors,
//! [`store`] holds the binary dataset and checkpoint formats, [`synth`] and
//! [`pipeline`] drive whole datasets, and [`cli`] is the `cfaud` front end.

pub mod airlink;
pub mod cli;
pub mod covdet;
pub mod error;
pub mod evalkit;
pub mod neuralnet;
pub mod pipeline;
pub mod preprocess;
pub mod scenario;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
