//! The interface shared by every round-based learner, and per-round records.

use crate::error::{check_dim, Error, Result};
use crate::model::{GlobalParams, LocalParams, Sample};

/// One played prediction: the loss client `client` incurred at `round` with
/// the model pair it held.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    pub client: usize,
    pub loss: f64,
    pub prediction: f64,
    pub label: f64,
    /// Bandit mode only: chosen action (0-based) and realized reward.
    pub action: Option<usize>,
    pub reward: Option<f64>,
}

/// A federated learner that advances one communication round at a time.
///
/// Each call to [`Federation::step`] feeds every client one batch of fresh
/// samples; the learner predicts on them with the pair each client holds,
/// then lets clients and server update.
pub trait Federation {
    fn clients(&self) -> usize;

    /// Rounds completed so far.
    fn rounds_done(&self) -> usize;

    /// The pair client `client` currently holds: its last fetched global
    /// model and its own local model.
    fn client_models(&self, client: usize) -> (&GlobalParams, &LocalParams);

    /// The pair client `client` will predict with in the next round.
    fn next_models(&self, client: usize) -> Result<(GlobalParams, LocalParams)>;

    /// The server's current global model.
    fn server_model(&self) -> &GlobalParams;

    fn step(&mut self, batches: &[&[Sample]]) -> Result<Vec<RoundTrace>>;

    fn fetch_counts(&self) -> Vec<usize>;
}

/// Final state and full trace of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub traces: Vec<RoundTrace>,
    pub global: GlobalParams,
    pub held: Vec<(GlobalParams, LocalParams)>,
    pub fetch_counts: Vec<usize>,
}

/// Drives `fed` for `rounds` rounds of `batch` samples per client, taking
/// samples from each client's stream in order.
pub fn drive<F: Federation + ?Sized>(
    fed: &mut F,
    streams: &[Vec<Sample>],
    rounds: usize,
    batch: usize,
) -> Result<RunOutcome> {
    check_dim("client streams", fed.clients(), streams.len())?;
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let needed = rounds * batch;
    if let Some((i, s)) = streams.iter().enumerate().find(|(_, s)| s.len() < needed) {
        return Err(Error::config(format!(
            "client {i} stream has {} samples, need {needed}",
            s.len()
        )));
    }
    let mut traces = Vec::with_capacity(needed * streams.len());
    for n in 0..rounds {
        let batches: Vec<&[Sample]> =
            streams.iter().map(|s| &s[n * batch..(n + 1) * batch]).collect();
        traces.extend(fed.step(&batches)?);
    }
    Ok(RunOutcome {
        traces,
        global: fed.server_model().clone(),
        held: (0..fed.clients())
            .map(|i| {
                let (g, l) = fed.client_models(i);
                (g.clone(), l.clone())
            })
            .collect(),
        fetch_counts: fed.fetch_counts(),
    })
}

/// Mean loss over all records.
pub fn mean_loss(traces: &[RoundTrace]) -> f64 {
    if traces.is_empty() {
        return f64::NAN;
    }
    traces.iter().map(|r| r.loss).sum::<f64>() / traces.len() as f64
}

/// Mean loss over the records from the last `fraction` of rounds.
pub fn terminal_mean_loss(traces: &[RoundTrace], fraction: f64) -> f64 {
    let last = traces.iter().map(|r| r.round).max().unwrap_or(0);
    let window = ((last as f64) * fraction).ceil().max(1.0) as usize;
    let from = last.saturating_sub(window) + 1;
    let tail: Vec<_> = traces.iter().filter(|r| r.round >= from).cloned().collect();
    mean_loss(&tail)
}

pub(crate) fn mean_of(grads: impl IntoIterator<Item = Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut count = 0usize;
    let mut acc: Option<Vec<f64>> = None;
    for g in grads {
        count += 1;
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
        }
    }
    match acc {
        None => vec![0.0; dim],
        Some(mut a) => {
            let n = count as f64;
            a.iter_mut().for_each(|x| *x /= n);
            a
        }
    }
}

pub(crate) fn check_batches(batches: &[&[Sample]], global_dim: usize, local_dims: &[usize]) -> Result<()> {
    check_dim("client batches", local_dims.len(), batches.len())?;
    let len = batches.first().map(|b| b.len()).unwrap_or(0);
    if len == 0 {
        return Err(Error::config("every client needs at least one sample per round"));
    }
    for (batch, &dl) in batches.iter().zip(local_dims) {
        check_dim("batch length", len, batch.len())?;
        for s in batch.iter() {
            check_dim("global features", global_dim, s.x_global.len())?;
            check_dim("local features", dl, s.x_local.len())?;
        }
    }
    Ok(())
}
