//! Command-line workflows (`contestnn`) and the JSON-over-HTTP service that
//! exposes contest sessions to an expert-facing frontend.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod manifest;
pub mod server;

pub use error::{GatewayError, GatewayResult};
