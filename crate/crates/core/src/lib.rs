//! Stepwise chest X-ray reasoning: a graph-attention memory teacher, a
//! compact chain student, the distillation objective that links them, and
//! tooling for seven-step `vqa_chain` datasets.

pub mod chain_data;
pub mod checks;
pub mod distill;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
