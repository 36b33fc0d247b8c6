//! Digital-twin laboratory for AI-based CSI feedback.
//!
//! The pipeline runs scene → ray tracing → OFDM channel synthesis →
//! eigen-precoder extraction, and then compresses those precoders either with a
//! Type II style DFT-beam codebook or with a quantized autoencoder that can be
//! pretrained on twin data and adapted by decoder-only online learning.

pub mod bits;
pub mod error;
pub mod channel;
pub mod dataset;
pub mod geom;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod precoder;
pub mod scene;
pub mod tracer;
pub mod type2;

pub use error::{Error, Result};
