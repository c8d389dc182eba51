//! Cross-camera adaptation for vehicle re-identification.
//!
//! The crate holds the whole pipeline: a seeded multi-camera toy dataset, a
//! multi-domain camera-style translation GAN, the attention-alignment
//! multi-branch network (AANet), descriptor fusion and ranking, and CMC/mAP
//! evaluation. Everything runs on a small float64 autodiff engine
//! ([`autograd`]) so gradients can be checked against finite differences.

pub mod aanet;
pub mod autograd;
pub mod camera_transfer;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod tensor;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
