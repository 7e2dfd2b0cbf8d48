//! Round-indexed message transport with fixed per-client delays.
//!
//! A payload a client sends at round `t` reaches the server at round
//! `t + alpha_i`. At round `t` a client can only fetch the global model that
//! was constructed at round `t - beta_i`; references to rounds `<= 0` resolve
//! to the initial model.

use std::collections::VecDeque;

use crate::error::{check_dim, Error, Result};
use crate::model::GlobalParams;

/// Per-client uplink (`alpha`) and downlink (`beta`) delays, in rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayConfig {
    pub uplink: Vec<usize>,
    pub downlink: Vec<usize>,
}

impl DelayConfig {
    pub fn zero(clients: usize) -> Self {
        Self::uniform(clients, 0, 0)
    }

    pub fn uniform(clients: usize, uplink: usize, downlink: usize) -> Self {
        DelayConfig {
            uplink: vec![uplink; clients],
            downlink: vec![downlink; clients],
        }
    }

    pub fn clients(&self) -> usize {
        self.uplink.len()
    }

    pub fn round_trip(&self, client: usize) -> usize {
        self.uplink[client] + self.downlink[client]
    }

    pub fn max_uplink(&self) -> usize {
        self.uplink.iter().copied().max().unwrap_or(0)
    }

    pub fn max_downlink(&self) -> usize {
        self.downlink.iter().copied().max().unwrap_or(0)
    }

    pub fn max_round_trip(&self) -> usize {
        (0..self.clients()).map(|i| self.round_trip(i)).max().unwrap_or(0)
    }

    /// `Some((alpha, beta))` when every client shares the same delays.
    pub fn as_uniform(&self) -> Option<(usize, usize)> {
        let a = *self.uplink.first()?;
        let b = *self.downlink.first()?;
        let same = self.uplink.iter().all(|&x| x == a) && self.downlink.iter().all(|&x| x == b);
        same.then_some((a, b))
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        check_dim("uplink delays", clients, self.uplink.len())?;
        check_dim("downlink delays", clients, self.downlink.len())
    }

    /// Rejects configurations whose round trip exceeds `tau`.
    pub fn validate_bound(&self, tau: usize) -> Result<()> {
        match (0..self.clients()).find(|&i| self.round_trip(i) > tau) {
            Some(i) => Err(Error::config(format!(
                "client {i} round trip {} exceeds bound {tau}",
                self.round_trip(i)
            ))),
            None => Ok(()),
        }
    }
}

/// FIFO queues from clients to the server.
#[derive(Debug, Clone)]
pub struct Uplink<P> {
    delays: Vec<usize>,
    queues: Vec<VecDeque<(usize, P)>>,
    last_received: Option<usize>,
}

impl<P> Uplink<P> {
    pub fn new(delays: Vec<usize>) -> Self {
        let queues = delays.iter().map(|_| VecDeque::new()).collect();
        Uplink {
            delays,
            queues,
            last_received: None,
        }
    }

    pub fn send(&mut self, client: usize, round: usize, payload: P) -> Result<usize> {
        if round == 0 {
            return Err(Error::invariant("rounds are numbered from 1"));
        }
        let delay = *self
            .delays
            .get(client)
            .ok_or_else(|| Error::config(format!("unknown client {client}")))?;
        let deliver_at = round + delay;
        let queue = &mut self.queues[client];
        if queue.back().is_some_and(|(due, _)| *due > deliver_at) {
            return Err(Error::invariant(format!(
                "client {client} sent out of round order"
            )));
        }
        queue.push_back((deliver_at, payload));
        Ok(deliver_at)
    }

    /// Payloads due at `round`, ascending by client and FIFO within a client.
    pub fn receive(&mut self, round: usize) -> Result<Vec<(usize, P)>> {
        if self.last_received.is_some_and(|last| round <= last) {
            return Err(Error::invariant(format!(
                "uplink already drained for round {round}"
            )));
        }
        self.last_received = Some(round);
        let mut out = Vec::new();
        for (client, queue) in self.queues.iter_mut().enumerate() {
            while queue.front().is_some_and(|(due, _)| *due <= round) {
                let (due, payload) = queue.pop_front().expect("front checked");
                if due < round {
                    return Err(Error::invariant(format!(
                        "payload from client {client} due at {due} was never received"
                    )));
                }
                out.push((client, payload));
            }
        }
        Ok(out)
    }

    pub fn pending(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }
}

/// Snapshots of the global model, keyed by the round they were constructed for.
#[derive(Debug, Clone)]
pub struct Downlink {
    delays: Vec<usize>,
    initial: GlobalParams,
    ring: VecDeque<(usize, GlobalParams)>,
    capacity: usize,
    fetches: Vec<usize>,
}

impl Downlink {
    /// `capacity` is the number of most recent snapshots retained.
    pub fn new(delays: Vec<usize>, initial: GlobalParams, capacity: usize) -> Self {
        let fetches = vec![0; delays.len()];
        Downlink {
            delays,
            initial,
            ring: VecDeque::with_capacity(capacity.max(1)),
            capacity: capacity.max(1),
            fetches,
        }
    }

    pub fn publish(&mut self, round: usize, model: GlobalParams) -> Result<()> {
        if let Some((last, _)) = self.ring.back() {
            if round != last + 1 {
                return Err(Error::invariant(format!(
                    "snapshot for round {round} published after round {last}"
                )));
            }
        }
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back((round, model));
        Ok(())
    }

    /// The snapshot constructed for `round`; rounds `<= 0` give the initial model.
    pub fn snapshot(&self, round: i64) -> Result<&GlobalParams> {
        if round <= 0 {
            return Ok(&self.initial);
        }
        let round = round as usize;
        let (first, _) = self
            .ring
            .front()
            .ok_or_else(|| Error::invariant(format!("no snapshot published for round {round}")))?;
        let idx = round
            .checked_sub(*first)
            .ok_or_else(|| Error::invariant(format!("snapshot for round {round} was evicted")))?;
        self.ring
            .get(idx)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::invariant(format!("no snapshot published for round {round}")))
    }

    /// What client `client` sees at `round`, with the nominal round
    /// `round - delay` it was built for (`<= 0` means the initial model).
    pub fn fetch(&mut self, client: usize, round: usize) -> Result<(i64, GlobalParams)> {
        let (built, model) = self.peek(client, round)?;
        let model = model.clone();
        self.fetches[client] += 1;
        Ok((built, model))
    }

    /// Like [`Downlink::fetch`] but not counted.
    pub fn peek(&self, client: usize, round: usize) -> Result<(i64, &GlobalParams)> {
        let delay = *self
            .delays
            .get(client)
            .ok_or_else(|| Error::config(format!("unknown client {client}")))?;
        let built = round as i64 - delay as i64;
        Ok((built, self.snapshot(built)?))
    }

    pub fn fetch_counts(&self) -> &[usize] {
        &self.fetches
    }

    pub fn initial(&self) -> &GlobalParams {
        &self.initial
    }

    pub fn latest_round(&self) -> Option<usize> {
        self.ring.back().map(|(r, _)| *r)
    }
}

/// Both directions of the transport for one simulation run.
#[derive(Debug, Clone)]
pub struct Channel<P> {
    pub uplink: Uplink<P>,
    pub downlink: Downlink,
}

impl<P> Channel<P> {
    /// Retains enough snapshots for any client fetch (age up to max beta) and
    /// for any server pairing of an arriving message (age up to max alpha + max beta).
    pub fn new(delays: &DelayConfig, initial: GlobalParams) -> Self {
        let capacity = delays.max_uplink() + delays.max_downlink() + 1;
        Channel {
            uplink: Uplink::new(delays.uplink.clone()),
            downlink: Downlink::new(delays.downlink.clone(), initial, capacity),
        }
    }
}
