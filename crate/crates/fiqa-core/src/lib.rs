//! Attention-magnitude face image quality.
//!
//! A small ViT runs a deterministic forward pass over a preprocessed face
//! crop; the pre-softmax attention scores of one block are captured and
//! aggregated into a scalar quality score. On top of that sit a patch-level
//! heatmap renderer and a verification-error-versus-discard evaluation
//! harness.

pub mod afqw;
pub mod config;
pub mod eval;
pub mod heatmap;
pub mod image;
pub mod scoring;
pub mod tensor;
pub mod vit;
pub mod weights;
