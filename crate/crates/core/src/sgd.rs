//! Residual SGD under uplink/downlink delay.
//!
//! Every gradient, on either side, is evaluated at an aligned pair
//! `(w^g_{s - beta_i}, w_{i,s})`: the global snapshot client `i` actually
//! played with at round `s`, together with its local model at `s`. The server
//! gets the pairing for free because each upload carries the local score from
//! round `s`; the client reproduces the server's lag by applying its local
//! gradient one round trip late.
//!
//! Round `t` proceeds as: each client fetches `w^g_{t - beta_i}`, predicts on
//! its batch with `(w^g_{t - beta_i}, w_{i,t})`, uploads residuals, then takes
//! its (delayed) local step to obtain `w_{i,t+1}`. The server then consumes the
//! residuals that arrive at `t`, takes one projected step with the sum of
//! per-client gradients, and publishes `w^g_{t+1}`.

use std::collections::VecDeque;

use crate::delay::{Channel, DelayConfig, Downlink};
use crate::error::{check_dim, Error, Result};
use crate::federation::{check_batches, drive, mean_of, Federation, RoundTrace, RunOutcome};
use crate::model::{
    dot, projected_step, GlobalParams, HyperParams, LocalParams, Loss, ResidualMessage, Sample,
    SquaredLoss,
};

/// Which pairing the learner uses for its gradients.
///
/// `Misaligned` and `Asymmetric` are the two naive update rules the aligned
/// scheme replaces; they exist for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SgdVariant {
    /// Client steps with the gradient from one round trip ago; server pairs
    /// each residual with the snapshot its sender used.
    #[default]
    Aligned,
    /// Client steps immediately; server evaluates arriving residuals at its
    /// current model.
    Misaligned,
    /// Client steps immediately; server pairs each residual with the snapshot
    /// its sender used.
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

/// Which model pair a gradient was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientTag {
    pub client: usize,
    pub side: Side,
    /// Construction round of the global snapshot (may be `<= 0` during warmup).
    pub global_round: i64,
    /// Round whose local model and sample produced the gradient.
    pub local_round: usize,
}

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub global_dim: usize,
    pub local_dims: Vec<usize>,
    pub hyper: HyperParams,
    pub delays: DelayConfig,
    pub variant: SgdVariant,
    /// Defaults to the origin.
    pub init_global: Option<Vec<f64>>,
    pub init_local: Option<Vec<Vec<f64>>>,
    pub record_provenance: bool,
}

impl SgdConfig {
    pub fn new(global_dim: usize, local_dims: Vec<usize>, hyper: HyperParams, delays: DelayConfig) -> Self {
        SgdConfig {
            global_dim,
            local_dims,
            hyper,
            delays,
            variant: SgdVariant::Aligned,
            init_global: None,
            init_local: None,
            record_provenance: false,
        }
    }

    pub fn clients(&self) -> usize {
        self.local_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.clients();
        if p == 0 {
            return Err(Error::config("need at least one client"));
        }
        self.hyper.validate(p)?;
        self.delays.validate(p)?;
        if let Some(g) = &self.init_global {
            check_dim("initial global model", self.global_dim, g.len())?;
            if crate::model::norm(g) > self.hyper.radius {
                return Err(Error::config("initial global model lies outside the ball"));
            }
        }
        if let Some(ls) = &self.init_local {
            check_dim("initial local models", p, ls.len())?;
            for (l, &d) in ls.iter().zip(&self.local_dims) {
                check_dim("initial local model", d, l.len())?;
                if crate::model::norm(l) > self.hyper.radius {
                    return Err(Error::config("initial local model lies outside the ball"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn initial_global(&self) -> GlobalParams {
        GlobalParams {
            w: self.init_global.clone().unwrap_or_else(|| vec![0.0; self.global_dim]),
        }
    }

    pub(crate) fn initial_local(&self, client: usize) -> LocalParams {
        let w = match &self.init_local {
            Some(ls) => ls[client].clone(),
            None => vec![0.0; self.local_dims[client]],
        };
        LocalParams { client, w }
    }
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    round: usize,
    global_round: i64,
    global: Vec<f64>,
    local: Vec<f64>,
    batch: Vec<Sample>,
}

/// What a client produces in one round.
#[derive(Debug, Clone)]
pub struct ClientStep {
    pub predictions: Vec<f64>,
    pub losses: Vec<f64>,
    pub messages: Vec<ResidualMessage>,
    pub update: Option<GradientTag>,
}

#[derive(Debug, Clone)]
pub struct SgdClientState<L: Loss = SquaredLoss> {
    pub local: LocalParams,
    eta: f64,
    radius: f64,
    lag: usize,
    history: VecDeque<HistoryEntry>,
    loss: L,
}

impl<L: Loss> SgdClientState<L> {
    pub fn new(local: LocalParams, eta: f64, radius: f64, uplink: usize, downlink: usize, variant: SgdVariant, loss: L) -> Self {
        let lag = match variant {
            SgdVariant::Aligned => uplink + downlink,
            SgdVariant::Misaligned | SgdVariant::Asymmetric => 0,
        };
        SgdClientState {
            local,
            eta,
            radius,
            lag,
            history: VecDeque::with_capacity(lag + 1),
            loss,
        }
    }

    /// Plays round `t` with the fetched snapshot (built for `fetched_round`),
    /// then applies the local step whose gradient is due this round.
    pub fn round(&mut self, t: usize, fetched_round: i64, fetched: &GlobalParams, batch: &[Sample]) -> Result<ClientStep> {
        let mut predictions = Vec::with_capacity(batch.len());
        let mut losses = Vec::with_capacity(batch.len());
        let mut messages = Vec::with_capacity(batch.len());
        for s in batch {
            check_dim("global features", fetched.dim(), s.x_global.len())?;
            check_dim("local features", self.local.dim(), s.x_local.len())?;
            let g = dot(&fetched.w, &s.x_global);
            let l = dot(&self.local.w, &s.x_local);
            predictions.push(g + l);
            losses.push(self.loss.value(s.y, g, l));
            messages.push(ResidualMessage {
                client: self.local.client,
                sent_at: t,
                x_global: s.x_global.clone(),
                local_prediction: l,
                y: s.y,
            });
        }

        self.history.push_back(HistoryEntry {
            round: t,
            global_round: fetched_round,
            global: fetched.w.clone(),
            local: self.local.w.clone(),
            batch: batch.to_vec(),
        });
        while self.history.len() > self.lag + 1 {
            self.history.pop_front();
        }

        let update = match t.checked_sub(self.lag).filter(|&s| s >= 1) {
            None => None,
            Some(s) => {
                let entry = self
                    .history
                    .iter()
                    .find(|e| e.round == s)
                    .ok_or_else(|| Error::invariant(format!("client history lacks round {s}")))?;
                let grads = entry
                    .batch
                    .iter()
                    .map(|x| self.loss.grad_local(&entry.global, &entry.local, x))
                    .collect::<Result<Vec<_>>>()?;
                let grad = mean_of(grads, self.local.dim());
                projected_step(&mut self.local.w, &grad, self.eta, self.radius);
                Some(GradientTag {
                    client: self.local.client,
                    side: Side::Client,
                    global_round: entry.global_round,
                    local_round: s,
                })
            }
        };

        Ok(ClientStep {
            predictions,
            losses,
            messages,
            update,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SgdServerState<L: Loss = SquaredLoss> {
    pub global: GlobalParams,
    eta: f64,
    radius: f64,
    variant: SgdVariant,
    downlink: Vec<usize>,
    loss: L,
}

impl<L: Loss> SgdServerState<L> {
    pub fn new(global: GlobalParams, eta: f64, radius: f64, downlink: Vec<usize>, variant: SgdVariant, loss: L) -> Self {
        SgdServerState {
            global,
            eta,
            radius,
            variant,
            downlink,
            loss,
        }
    }

    /// One projected step with the summed gradients of the residual batches
    /// that arrived this round. Returns the tags of the gradients used.
    pub fn round(&mut self, arrivals: &[(usize, Vec<ResidualMessage>)], snapshots: &Downlink) -> Result<Vec<GradientTag>> {
        let mut tags = Vec::with_capacity(arrivals.len());
        let mut total: Option<Vec<f64>> = None;
        for (client, msgs) in arrivals {
            let beta = *self
                .downlink
                .get(*client)
                .ok_or_else(|| Error::config(format!("message from unknown client {client}")))?;
            let sent_at = msgs
                .first()
                .map(|m| m.sent_at)
                .ok_or_else(|| Error::invariant("empty residual batch"))?;
            if msgs.iter().any(|m| m.sent_at != sent_at || m.client != *client) {
                return Err(Error::invariant("residual batch mixes rounds or clients"));
            }
            let (global_round, at) = match self.variant {
                SgdVariant::Aligned | SgdVariant::Asymmetric => {
                    let r = sent_at as i64 - beta as i64;
                    (r, snapshots.snapshot(r)?)
                }
                SgdVariant::Misaligned => {
                    let r = snapshots.latest_round().map(|r| r as i64).unwrap_or(0);
                    (r, &self.global)
                }
            };
            let grads = msgs
                .iter()
                .map(|m| self.loss.grad_global_from_message(&at.w, m))
                .collect::<Result<Vec<_>>>()?;
            let grad = mean_of(grads, self.global.dim());
            match total.as_mut() {
                None => total = Some(grad),
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
            }
            tags.push(GradientTag {
                client: *client,
                side: Side::Server,
                global_round,
                local_round: sent_at,
            });
        }
        if let Some(total) = total {
            projected_step(&mut self.global.w, &total, self.eta, self.radius);
        }
        Ok(tags)
    }
}

/// Clients, server and channel of one residual-SGD run.
#[derive(Debug, Clone)]
pub struct SgdFederation<L: Loss = SquaredLoss> {
    clients: Vec<SgdClientState<L>>,
    server: SgdServerState<L>,
    channel: Channel<Vec<ResidualMessage>>,
    held_global: Vec<GlobalParams>,
    global_dim: usize,
    local_dims: Vec<usize>,
    round: usize,
    provenance: Option<Vec<GradientTag>>,
}

impl SgdFederation<SquaredLoss> {
    pub fn new(cfg: &SgdConfig) -> Result<Self> {
        Self::with_loss(cfg, SquaredLoss)
    }
}

impl<L: Loss> SgdFederation<L> {
    pub fn with_loss(cfg: &SgdConfig, loss: L) -> Result<Self> {
        cfg.validate()?;
        let init = cfg.initial_global();
        let mut channel = Channel::new(&cfg.delays, init.clone());
        channel.downlink.publish(1, init.clone())?;
        let clients = (0..cfg.clients())
            .map(|i| {
                SgdClientState::new(
                    cfg.initial_local(i),
                    cfg.hyper.eta_local[i],
                    cfg.hyper.radius,
                    cfg.delays.uplink[i],
                    cfg.delays.downlink[i],
                    cfg.variant,
                    loss.clone(),
                )
            })
            .collect();
        let server = SgdServerState::new(
            init.clone(),
            cfg.hyper.eta_global,
            cfg.hyper.radius,
            cfg.delays.downlink.clone(),
            cfg.variant,
            loss,
        );
        Ok(SgdFederation {
            clients,
            server,
            channel,
            held_global: vec![init; cfg.clients()],
            global_dim: cfg.global_dim,
            local_dims: cfg.local_dims.clone(),
            round: 0,
            provenance: cfg.record_provenance.then(Vec::new),
        })
    }

    /// Gradient tags recorded so far, if provenance recording was enabled.
    pub fn provenance(&self) -> Option<&[GradientTag]> {
        self.provenance.as_deref()
    }

    pub fn local(&self, client: usize) -> &LocalParams {
        &self.clients[client].local
    }
}

impl<L: Loss> Federation for SgdFederation<L> {
    fn clients(&self) -> usize {
        self.clients.len()
    }

    fn rounds_done(&self) -> usize {
        self.round
    }

    fn client_models(&self, client: usize) -> (&GlobalParams, &LocalParams) {
        (&self.held_global[client], &self.clients[client].local)
    }

    fn next_models(&self, client: usize) -> Result<(GlobalParams, LocalParams)> {
        let (_, g) = self.channel.downlink.peek(client, self.round + 1)?;
        Ok((g.clone(), self.clients[client].local.clone()))
    }

    fn server_model(&self) -> &GlobalParams {
        &self.server.global
    }

    fn step(&mut self, batches: &[&[Sample]]) -> Result<Vec<RoundTrace>> {
        check_batches(batches, self.global_dim, &self.local_dims)?;
        let t = self.round + 1;
        let b = batches[0].len();
        let mut traces = Vec::with_capacity(b * batches.len());
        for (i, batch) in batches.iter().enumerate() {
            let (built, fetched) = self.channel.downlink.fetch(i, t)?;
            let out = self.clients[i].round(t, built, &fetched, batch)?;
            for (k, s) in batch.iter().enumerate() {
                traces.push(RoundTrace {
                    round: (t - 1) * b + k + 1,
                    client: i,
                    loss: out.losses[k],
                    prediction: out.predictions[k],
                    label: s.y,
                    action: None,
                    reward: None,
                });
            }
            if let (Some(log), Some(tag)) = (self.provenance.as_mut(), out.update) {
                log.push(tag);
            }
            self.channel.uplink.send(i, t, out.messages)?;
            self.held_global[i] = fetched;
        }
        let arrivals = self.channel.uplink.receive(t)?;
        let tags = self.server.round(&arrivals, &self.channel.downlink)?;
        if let Some(log) = self.provenance.as_mut() {
            log.extend(tags);
        }
        self.channel.downlink.publish(t + 1, self.server.global.clone())?;
        self.round = t;
        Ok(traces)
    }

    fn fetch_counts(&self) -> Vec<usize> {
        self.channel.downlink.fetch_counts().to_vec()
    }
}

/// Runs residual SGD for `rounds` rounds of one sample per client.
pub fn run_fedres_sgd(streams: &[Vec<Sample>], cfg: &SgdConfig, rounds: usize) -> Result<RunOutcome> {
    if rounds == 0 {
        return Err(Error::config("need at least one round"));
    }
    let mut fed = SgdFederation::new(cfg)?;
    drive(&mut fed, streams, rounds, 1)
}
