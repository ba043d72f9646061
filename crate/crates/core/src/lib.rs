//! Point-or-Protest reference resolution.
//!
//! Given a linguistic query and a variable-length sequence of candidate
//! objects, a model either points at the single object the query denotes or
//! protests that the reference act is anomalous (no referent, or more than
//! one). The crate contains the neural model with hand-derived gradients, a
//! max-margin embedding pipeline with threshold heuristics, non-learned
//! baselines, seeded dataset generators over a synthetic embedding world, and
//! a training/evaluation harness.

pub mod baselines;
pub mod datagen;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod pipeline;
pub mod pop;

pub use error::{Error, Result};
