//! Sampled-data signal reconstruction toolkit.
//!
//! Design path: model the analog signal class by a stable filter F(s),
//! reduce the multirate reconstruction error system to a single-rate
//! discrete-time model-matching problem by fast-sample/fast-hold lifting,
//! and synthesize a stable, causal interpolation filter by H-infinity
//! gamma-iteration. A consistent-reconstruction (oblique-projection)
//! filter is built alongside as the rival method, together with signal,
//! audio, and image evaluation pipelines.

pub mod error;
pub mod hinf;
pub mod lifting;
pub mod linalg;
pub mod statespace;

pub use error::{Error, Result};
