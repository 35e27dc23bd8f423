//! Federated learning simulator built around loss-powered adaptive aggregation
//! for a fair global model and per-client personalized feature extractors that
//! are regularized by an adversarial global/local feature discriminator.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`] is a small dense-network stack (forward, backward, losses, SGD).
//! * [`data`] synthesizes long-tailed federations and ingests tabular files.
//! * [`fl`] holds the server and client state machines and the round loop.
//! * [`metrics`] computes macro-F1 and the global/local test scores.
//! * [`experiment`] wires everything into reproducible runs for the CLI.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
