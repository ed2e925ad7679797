//! Decentralized consensus ADMM with additive computation error.

pub mod admm;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod noise;
pub mod objective;
pub mod output;
pub mod topology;

pub use error::{Error, Result};
