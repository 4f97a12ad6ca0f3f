//! Contestable joint networks: a feed-forward network that predicts a target
//! while reconstructing every feature under an acyclicity-inducing loss,
//! causal-graph injection through input-layer masks, and an iterative expert
//! contestation loop over the extracted graph.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix it to double precision, which is what the data,
//! evaluation and training entry points use.

pub mod data;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graphs;
pub mod injector;
pub mod jointnet;
pub mod losses;
pub mod netcore;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = netcore::Matrix<f64>;
pub type Matrix32 = netcore::Matrix<f32>;
pub type JointNetwork64 = jointnet::JointNetwork<f64>;
pub type JointNetwork32 = jointnet::JointNetwork<f32>;
pub type AdjacencyMatrix64 = jointnet::AdjacencyMatrix<f64>;
