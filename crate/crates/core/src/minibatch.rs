//! Mini-batching: clients and server update once per batch of `b` rounds, on
//! the mean of the batch's losses, and fetch the global model once per batch.
//!
//! Delays measured in rounds become `ceil(alpha / b)` and `ceil(beta / b)`
//! batches. Every sample in a batch is predicted with the pair fetched at the
//! batch start.

use crate::delay::DelayConfig;
use crate::error::{check_dim, Error, Result};
use crate::federation::{drive, mean_of, Federation, RunOutcome};
use crate::model::{GlobalParams, LocalParams, Loss, Sample, SquaredLoss};
use crate::sgd::{SgdConfig, SgdFederation};

fn check_batch(samples: &[Sample], b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    check_dim("batch length", b, samples.len())
}

/// `(1/b) sum_k loss_k(wg, wl)` over one batch.
pub fn aggregate_loss(samples: &[Sample], b: usize, wg: &GlobalParams, wl: &LocalParams) -> Result<f64> {
    check_batch(samples, b)?;
    let losses = samples
        .iter()
        .map(|s| SquaredLoss.eval(&wg.w, &wl.w, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / b as f64)
}

/// Gradients of [`aggregate_loss`] with respect to the global and local models.
pub fn aggregate_grads(samples: &[Sample], b: usize, wg: &GlobalParams, wl: &LocalParams) -> Result<(Vec<f64>, Vec<f64>)> {
    check_batch(samples, b)?;
    let g = samples
        .iter()
        .map(|s| SquaredLoss.grad_global(&wg.w, &wl.w, s))
        .collect::<Result<Vec<_>>>()?;
    let l = samples
        .iter()
        .map(|s| SquaredLoss.grad_local(&wg.w, &wl.w, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((mean_of(g, wg.dim()), mean_of(l, wl.dim())))
}

/// A sample stream read in consecutive batches of `b`.
#[derive(Debug, Clone)]
pub struct BatchedStream<'a> {
    samples: &'a [Sample],
    b: usize,
    n: usize,
}

impl<'a> BatchedStream<'a> {
    /// `rounds` must be a multiple of `b` and no longer than the stream.
    pub fn new(samples: &'a [Sample], b: usize, rounds: usize) -> Result<Self> {
        batch_count(rounds, b)?;
        if samples.len() < rounds {
            return Err(Error::config(format!("stream has {} samples, need {rounds}", samples.len())));
        }
        Ok(BatchedStream {
            samples: &samples[..rounds],
            b,
            n: 0,
        })
    }

    /// Index of the next batch, counting from 1.
    pub fn next_index(&self) -> usize {
        self.n + 1
    }
}

impl<'a> Iterator for BatchedStream<'a> {
    type Item = &'a [Sample];

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.n * self.b;
        if start >= self.samples.len() {
            return None;
        }
        self.n += 1;
        Some(&self.samples[start..start + self.b])
    }
}

/// Number of batches, `rounds / b`; errors unless `b` divides `rounds`.
pub fn batch_count(rounds: usize, b: usize) -> Result<usize> {
    if b == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if rounds == 0 || rounds % b != 0 {
        return Err(Error::config(format!("batch size {b} must divide the round count {rounds}")));
    }
    Ok(rounds / b)
}

/// Per-client delays counted in batches.
pub fn batch_delays(delays: &DelayConfig, b: usize) -> DelayConfig {
    let up = |d: &usize| d.div_ceil(b.max(1));
    DelayConfig {
        uplink: delays.uplink.iter().map(up).collect(),
        downlink: delays.downlink.iter().map(up).collect(),
    }
}

/// Drives any learner for `rounds` rounds in batches of `b`. The learner
/// must already be configured with batch-counted delays.
pub fn drive_batched<F: Federation + ?Sized>(fed: &mut F, streams: &[Vec<Sample>], b: usize, rounds: usize) -> Result<RunOutcome> {
    let n = batch_count(rounds, b)?;
    drive(fed, streams, n, b)
}

/// Residual SGD on the aggregated loss sequence: `rounds / b` updates,
/// delays converted to batches.
pub fn run_batched(cfg: &SgdConfig, streams: &[Vec<Sample>], b: usize, rounds: usize) -> Result<RunOutcome> {
    batch_count(rounds, b)?;
    let mut cfg = cfg.clone();
    cfg.delays = batch_delays(&cfg.delays, b);
    let mut fed = SgdFederation::new(&cfg)?;
    drive_batched(&mut fed, streams, b, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(g: &[f64], l: &[f64], y: f64) -> Sample {
        Sample::new(g.to_vec(), l.to_vec(), y).unwrap()
    }

    #[test]
    fn single_sample_batch_is_the_sample() {
        let x = [s(&[1.0, -2.0], &[0.5], 0.3)];
        let wg = GlobalParams { w: vec![0.2, 0.1] };
        let wl = LocalParams { client: 0, w: vec![-1.0] };
        assert_eq!(aggregate_loss(&x, 1, &wg, &wl).unwrap(), SquaredLoss.eval(&wg.w, &wl.w, &x[0]).unwrap());
        let (g, l) = aggregate_grads(&x, 1, &wg, &wl).unwrap();
        assert_eq!(g, SquaredLoss.grad_global(&wg.w, &wl.w, &x[0]).unwrap());
        assert_eq!(l, SquaredLoss.grad_local(&wg.w, &wl.w, &x[0]).unwrap());
    }

    #[test]
    fn duplicated_samples_average_to_themselves() {
        let x = s(&[1.5], &[0.5], 2.0);
        let two = [x.clone(), x.clone()];
        let wg = GlobalParams { w: vec![0.3] };
        let wl = LocalParams { client: 0, w: vec![0.7] };
        assert_eq!(aggregate_loss(&two, 2, &wg, &wl).unwrap(), aggregate_loss(&two[..1], 1, &wg, &wl).unwrap());
        assert_eq!(aggregate_grads(&two, 2, &wg, &wl).unwrap(), aggregate_grads(&two[..1], 1, &wg, &wl).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        let x = [s(&[1.0], &[1.0], 1.0)];
        let wg = GlobalParams::zeros(1);
        let wl = LocalParams::zeros(0, 1);
        assert!(aggregate_loss(&x, 2, &wg, &wl).is_err());
        assert!(aggregate_grads(&x, 0, &wg, &wl).is_err());
    }

    #[test]
    fn batch_delays_round_up() {
        let d = DelayConfig {
            uplink: vec![0, 1, 4, 5],
            downlink: vec![3, 4, 8, 9],
        };
        let b = batch_delays(&d, 4);
        assert_eq!(b.uplink, vec![0, 1, 1, 2]);
        assert_eq!(b.downlink, vec![1, 1, 2, 3]);
    }

    #[test]
    fn stream_yields_consecutive_batches() {
        let xs: Vec<_> = (0..6).map(|k| s(&[k as f64], &[], 0.0)).collect();
        let batches: Vec<_> = BatchedStream::new(&xs, 2, 6).unwrap().collect();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2][0].x_global, vec![4.0]);
        assert!(BatchedStream::new(&xs, 4, 6).is_err());
        assert!(BatchedStream::new(&xs, 2, 8).is_err());
    }

    #[test]
    fn indivisible_round_count_rejected() {
        assert!(batch_count(10, 3).is_err());
        assert_eq!(batch_count(12, 3).unwrap(), 4);
    }
}
