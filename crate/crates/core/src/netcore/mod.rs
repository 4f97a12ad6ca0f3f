//! Minimal dense numeric engine: matrices, matrix exponential, Adam and a
//! seeded generator.

mod adam;
mod expm;
mod matrix;
pub mod rng;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use expm::{matrix_exponential, trace_exp_gradient};
pub use matrix::Matrix;
pub use rng::SeededRng;
