//! Deterministic simulator for federated residual learning under
//! communication delay.
//!
//! A prediction is the sum of a global model shared through a server and a
//! per-client local model. Learners exchange messages through channels with
//! fixed per-client uplink and downlink delays.

pub mod bandit;
pub mod baselines;
pub mod datagen;
pub mod delay;
pub mod erm;
pub mod error;
pub mod federation;
pub mod harness;
pub mod linalg;
pub mod minibatch;
pub mod model;
pub mod rng;
pub mod sgd;

pub use error::{Error, Result};
