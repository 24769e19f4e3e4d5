//! Peer-to-peer federated learning simulator with agreement-based update
//! selection, robust aggregation baselines and malfunction injection.
//!
//! Every source of randomness is a stream derived from one master seed, so a
//! configuration fully determines its output regardless of thread count.

pub mod aggregate;
pub mod agreement;
pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod nn;
pub mod output;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
