//! MedFuse: multiplicative feature–value embedding fusion for irregular
//! multivariate time series.
//!
//! Pipeline: raw events → windowed summarization into triplet tokens
//! ([`data`]) → per-token embeddings with sigmoid-gated block-broadcast
//! Hadamard fusion ([`embedding`]) → masked transformer encoder and softmax
//! head ([`encoder`]) → training with hand-written reverse-mode gradients
//! ([`training`]) → imbalance-aware evaluation ([`metrics`]) and the
//! experiment harnesses ([`experiments`]).

pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use tensor::Mat;
