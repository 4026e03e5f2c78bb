//! Attentional sequence-to-sequence toolkit with a monotonicity loss on
//! attention positions.
//!
//! The crate trains tiny transformer-style encoder–decoder models on
//! character-level transduction tasks and regularizes the cross-attention
//! towards monotonic source/target alignments by penalizing decreases of the
//! mean attended source position between consecutive decoder steps. It also
//! ships the analysis side: monotonicity scoring of trained models, per-head
//! breakdowns, weight sweeps, and attention heatmap export.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod monoloss;
pub mod ndgrad;
pub mod trainer;

pub use error::{Error, Result};
