//! Central and Independent comparison schemes, both run on the residual SGD
//! engine with re-routed features.
//!
//! Central drops every local block, so clients predict with the (delayed)
//! global model alone and the server fits the pooled global features.
//! Independent drops the global block and hands each client its full feature
//! vector as local features; nothing crosses the network, so it runs delay-free.

use crate::delay::DelayConfig;
use crate::error::Result;
use crate::federation::RunOutcome;
use crate::model::{HyperParams, Sample};
use crate::sgd::{run_fedres_sgd, SgdConfig};

/// The sample as Central sees it: global features only.
pub fn central_sample(s: &Sample) -> Sample {
    Sample {
        x_global: s.x_global.clone(),
        x_local: Vec::new(),
        y: s.y,
    }
}

/// The sample as Independent sees it: `[x_global; x_local]` as local features.
pub fn independent_sample(s: &Sample) -> Sample {
    let mut x = Vec::with_capacity(s.x_global.len() + s.x_local.len());
    x.extend_from_slice(&s.x_global);
    x.extend_from_slice(&s.x_local);
    Sample {
        x_global: Vec::new(),
        x_local: x,
        y: s.y,
    }
}

pub fn central_streams(streams: &[Vec<Sample>]) -> Vec<Vec<Sample>> {
    streams.iter().map(|s| s.iter().map(central_sample).collect()).collect()
}

pub fn independent_streams(streams: &[Vec<Sample>]) -> Vec<Vec<Sample>> {
    streams.iter().map(|s| s.iter().map(independent_sample).collect()).collect()
}

pub fn central_config(global_dim: usize, clients: usize, hyper: HyperParams, delays: DelayConfig) -> SgdConfig {
    SgdConfig::new(global_dim, vec![0; clients], hyper, delays)
}

pub fn independent_config(global_dim: usize, local_dims: &[usize], hyper: HyperParams) -> SgdConfig {
    let dims = local_dims.iter().map(|d| global_dim + d).collect();
    SgdConfig::new(0, dims, hyper, DelayConfig::zero(local_dims.len()))
}

/// Server-side SGD over the pooled global features, subject to `delays`.
pub fn run_central(streams: &[Vec<Sample>], global_dim: usize, delays: &DelayConfig, hyper: &HyperParams, rounds: usize) -> Result<RunOutcome> {
    let cfg = central_config(global_dim, streams.len(), hyper.clone(), delays.clone());
    run_fedres_sgd(&central_streams(streams), &cfg, rounds)
}

/// Per-client projected SGD on the full feature vector with step `eta_local[i]`.
pub fn run_independent(streams: &[Vec<Sample>], global_dim: usize, local_dims: &[usize], hyper: &HyperParams, rounds: usize) -> Result<RunOutcome> {
    let cfg = independent_config(global_dim, local_dims, hyper.clone());
    run_fedres_sgd(&independent_streams(streams), &cfg, rounds)
}
