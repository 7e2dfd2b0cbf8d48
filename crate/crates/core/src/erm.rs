//! Residual ERM and its fictitious-play variant.
//!
//! Each side repeatedly solves a constrained least-squares problem over every
//! sample seen so far, with the other side's model held fixed. The two
//! variants differ only in which counterpart model enters an archived sample's
//! residual:
//!
//! * [`CounterpartPolicy::Refit`] (ERM) re-applies the counterpart's *latest*
//!   model to the whole archive, so the server needs each client's current
//!   local model and raw local features.
//! * [`CounterpartPolicy::Frozen`] (fictitious play) keeps, for each archived
//!   sample, the counterpart's score from the round the sample was observed,
//!   so clients only upload a scalar residual.
//!
//! Both are kept as incremental sufficient statistics: with own features `u`,
//! counterpart features `v` and counterpart model `c`, the problem
//! `min_w sum (y - c.v - w.u)^2` has Gram `sum u u'` and right-hand side
//! `sum u y - sum u (c.v)`. Refit samples contribute to `sum u v'` (applied to
//! the current `c` on demand); frozen samples contribute `u (c_s.v)` once.
//!
//! Round `t` with uniform delays `(alpha, beta)`: client `i` fetches
//! `w^g_{t-beta}`, solves for `w_{i,t}` on its samples from rounds `< t`,
//! predicts, archives its new sample and uploads. At the end of the round the
//! server absorbs uploads from round `t - alpha`, solves for `w^g_{t+1}` and
//! publishes it.

use crate::delay::{Channel, DelayConfig};
use crate::error::{check_dim, Error, Result};
use crate::federation::{check_batches, drive, Federation, RoundTrace, RunOutcome};
use crate::linalg::{solve_normal_equations, GramFactor};
use crate::model::{dot, norm, GlobalParams, LocalParams, Sample};

/// Default relative tolerance of the per-round least-squares solves.
pub const SOLVER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CounterpartPolicy {
    /// Re-apply the counterpart's latest model to every archived sample.
    #[default]
    Refit,
    /// Keep the counterpart score from the round each sample was observed.
    Frozen,
}

/// Sufficient statistics of one side's least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SideAccumulator {
    own: usize,
    other: usize,
    count: usize,
    gram: Vec<f64>,
    by: Vec<f64>,
    cross: Vec<f64>,
    frozen: Vec<f64>,
}

impl SideAccumulator {
    pub fn new(own: usize, other: usize) -> Self {
        SideAccumulator {
            own,
            other,
            count: 0,
            gram: vec![0.0; own * own],
            by: vec![0.0; own],
            cross: vec![0.0; own * other],
            frozen: vec![0.0; own],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    fn add_common(&mut self, u: &[f64], y: f64) {
        let d = self.own;
        for j in 0..d {
            self.by[j] += u[j] * y;
            for k in 0..d {
                self.gram[j * d + k] += u[j] * u[k];
            }
        }
        self.count += 1;
    }

    /// Archives a sample whose counterpart term follows the counterpart model.
    pub fn add_refit(&mut self, u: &[f64], v: &[f64], y: f64) -> Result<()> {
        check_dim("own features", self.own, u.len())?;
        check_dim("counterpart features", self.other, v.len())?;
        self.add_common(u, y);
        for j in 0..self.own {
            for k in 0..self.other {
                self.cross[j * self.other + k] += u[j] * v[k];
            }
        }
        Ok(())
    }

    /// Archives a sample with its counterpart score fixed at `score`.
    pub fn add_frozen(&mut self, u: &[f64], score: f64, y: f64) -> Result<()> {
        check_dim("own features", self.own, u.len())?;
        self.add_common(u, y);
        for (f, x) in self.frozen.iter_mut().zip(u) {
            *f += x * score;
        }
        Ok(())
    }

    /// Right-hand side of the normal equations given the counterpart model.
    pub fn rhs(&self, counterpart: &[f64]) -> Result<Vec<f64>> {
        check_dim("counterpart model", self.other, counterpart.len())?;
        Ok((0..self.own)
            .map(|j| {
                let row = &self.cross[j * self.other..(j + 1) * self.other];
                self.by[j] - self.frozen[j] - dot(row, counterpart)
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct ErmConfig {
    pub global_dim: usize,
    pub local_dims: Vec<usize>,
    pub radius: f64,
    pub delays: DelayConfig,
    pub policy: CounterpartPolicy,
    /// Returned by a side's solve while it has no data; defaults to the origin.
    pub init_global: Option<Vec<f64>>,
    pub init_local: Option<Vec<Vec<f64>>>,
    pub tol: f64,
}

impl ErmConfig {
    pub fn new(global_dim: usize, local_dims: Vec<usize>, radius: f64, delays: DelayConfig) -> Self {
        ErmConfig {
            global_dim,
            local_dims,
            radius,
            delays,
            policy: CounterpartPolicy::Refit,
            init_global: None,
            init_local: None,
            tol: SOLVER_TOL,
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
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("solver tolerance must be positive"));
        }
        self.delays.validate(p)?;
        if self.delays.as_uniform().is_none() {
            return Err(Error::config("ERM learners need the same delays for every client"));
        }
        if let Some(g) = &self.init_global {
            check_dim("initial global model", self.global_dim, g.len())?;
            if norm(g) > self.radius {
                return Err(Error::config("initial global model lies outside the ball"));
            }
        }
        if let Some(ls) = &self.init_local {
            check_dim("initial local models", p, ls.len())?;
            for (l, &d) in ls.iter().zip(&self.local_dims) {
                check_dim("initial local model", d, l.len())?;
                if norm(l) > self.radius {
                    return Err(Error::config("initial local model lies outside the ball"));
                }
            }
        }
        Ok(())
    }
}

/// What an ERM client uploads for one sample. Fictitious play only needs
/// `x_global`, `local_prediction` and `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErmUpload {
    pub sample: Sample,
    pub local: Vec<f64>,
    pub local_prediction: f64,
    pub sent_at: usize,
}

#[derive(Debug, Clone)]
pub struct ErmClientState {
    pub local: LocalParams,
    init: Vec<f64>,
    acc: SideAccumulator,
    policy: CounterpartPolicy,
    radius: f64,
    tol: f64,
}

impl ErmClientState {
    pub fn new(init: LocalParams, global_dim: usize, policy: CounterpartPolicy, radius: f64, tol: f64) -> Self {
        let acc = SideAccumulator::new(init.dim(), global_dim);
        ErmClientState {
            init: init.w.clone(),
            local: init,
            acc,
            policy,
            radius,
            tol,
        }
    }

    pub fn archived(&self) -> usize {
        self.acc.count()
    }

    /// Recomputes the local model against `fetched` over the archive.
    pub fn solve(&mut self, fetched: &GlobalParams) -> Result<&LocalParams> {
        if self.acc.count() == 0 {
            self.local.w.clone_from(&self.init);
        } else {
            let rhs = self.acc.rhs(&fetched.w)?;
            self.local.w = solve_normal_equations(self.acc.gram(), &rhs, self.radius, self.tol)?;
        }
        Ok(&self.local)
    }

    /// Adds a sample observed while playing with `fetched`.
    pub fn archive(&mut self, s: &Sample, fetched: &GlobalParams) -> Result<()> {
        match self.policy {
            CounterpartPolicy::Refit => self.acc.add_refit(&s.x_local, &s.x_global, s.y),
            CounterpartPolicy::Frozen => {
                check_dim("global features", fetched.dim(), s.x_global.len())?;
                self.acc.add_frozen(&s.x_local, dot(&fetched.w, &s.x_global), s.y)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErmServerState {
    pub global: GlobalParams,
    init: Vec<f64>,
    gram: Vec<f64>,
    clients: Vec<SideAccumulator>,
    latest_local: Vec<Vec<f64>>,
    policy: CounterpartPolicy,
    radius: f64,
    tol: f64,
}

impl ErmServerState {
    pub fn new(init: GlobalParams, local_dims: &[usize], policy: CounterpartPolicy, radius: f64, tol: f64) -> Self {
        let d = init.dim();
        let clients = local_dims.iter().map(|&dl| SideAccumulator::new(d, dl)).collect();
        ErmServerState {
            init: init.w.clone(),
            global: init,
            gram: vec![0.0; d * d],
            clients,
            latest_local: local_dims.iter().map(|&dl| vec![0.0; dl]).collect(),
            policy,
            radius,
            tol,
        }
    }

    pub fn archived(&self) -> usize {
        self.clients.iter().map(SideAccumulator::count).sum()
    }

    pub fn absorb(&mut self, client: usize, uploads: &[ErmUpload]) -> Result<()> {
        let acc = self
            .clients
            .get_mut(client)
            .ok_or_else(|| Error::config(format!("upload from unknown client {client}")))?;
        for u in uploads {
            let s = &u.sample;
            match self.policy {
                CounterpartPolicy::Refit => {
                    check_dim("uploaded local model", self.latest_local[client].len(), u.local.len())?;
                    acc.add_refit(&s.x_global, &s.x_local, s.y)?;
                    self.latest_local[client].clone_from(&u.local);
                }
                CounterpartPolicy::Frozen => acc.add_frozen(&s.x_global, u.local_prediction, s.y)?,
            }
            let d = self.global.dim();
            for j in 0..d {
                for k in 0..d {
                    self.gram[j * d + k] += s.x_global[j] * s.x_global[k];
                }
            }
        }
        Ok(())
    }

    /// Recomputes the global model over everything absorbed so far.
    pub fn solve(&mut self) -> Result<&GlobalParams> {
        if self.archived() == 0 {
            self.global.w.clone_from(&self.init);
            return Ok(&self.global);
        }
        let d = self.global.dim();
        let mut rhs = vec![0.0; d];
        for (acc, wl) in self.clients.iter().zip(&self.latest_local) {
            for (r, v) in rhs.iter_mut().zip(acc.rhs(wl)?) {
                *r += v;
            }
        }
        self.global.w = GramFactor::new(&self.gram, d)?.solve(&rhs, self.radius, self.tol)?;
        Ok(&self.global)
    }
}

/// Clients, server and channel of one ERM or fictitious-play run.
#[derive(Debug, Clone)]
pub struct ErmFederation {
    clients: Vec<ErmClientState>,
    server: ErmServerState,
    channel: Channel<Vec<ErmUpload>>,
    held_global: Vec<GlobalParams>,
    global_dim: usize,
    local_dims: Vec<usize>,
    uplink_delay: usize,
    round: usize,
}

impl ErmFederation {
    pub fn new(cfg: &ErmConfig) -> Result<Self> {
        cfg.validate()?;
        let init = GlobalParams {
            w: cfg.init_global.clone().unwrap_or_else(|| vec![0.0; cfg.global_dim]),
        };
        let mut channel = Channel::new(&cfg.delays, init.clone());
        channel.downlink.publish(1, init.clone())?;
        let clients = (0..cfg.clients())
            .map(|i| {
                let w = match &cfg.init_local {
                    Some(ls) => ls[i].clone(),
                    None => vec![0.0; cfg.local_dims[i]],
                };
                ErmClientState::new(LocalParams { client: i, w }, cfg.global_dim, cfg.policy, cfg.radius, cfg.tol)
            })
            .collect();
        let server = ErmServerState::new(init.clone(), &cfg.local_dims, cfg.policy, cfg.radius, cfg.tol);
        let (alpha, _) = cfg.delays.as_uniform().expect("validated");
        Ok(ErmFederation {
            clients,
            server,
            channel,
            held_global: vec![init; cfg.clients()],
            global_dim: cfg.global_dim,
            local_dims: cfg.local_dims.clone(),
            uplink_delay: alpha,
            round: 0,
        })
    }

    pub fn local(&self, client: usize) -> &LocalParams {
        &self.clients[client].local
    }
}

impl Federation for ErmFederation {
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
        let mut c = self.clients[client].clone();
        let l = c.solve(g)?.clone();
        Ok((g.clone(), l))
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
            let (_, fetched) = self.channel.downlink.fetch(i, t)?;
            let client = &mut self.clients[i];
            let wl = client.solve(&fetched)?.w.clone();
            let mut uploads = Vec::with_capacity(b);
            for (k, s) in batch.iter().enumerate() {
                let g = dot(&fetched.w, &s.x_global);
                let l = dot(&wl, &s.x_local);
                let r = s.y - (g + l);
                traces.push(RoundTrace {
                    round: (t - 1) * b + k + 1,
                    client: i,
                    loss: r * r,
                    prediction: g + l,
                    label: s.y,
                    action: None,
                    reward: None,
                });
                client.archive(s, &fetched)?;
                uploads.push(ErmUpload {
                    sample: s.clone(),
                    local: wl.clone(),
                    local_prediction: l,
                    sent_at: t,
                });
            }
            self.channel.uplink.send(i, t, uploads)?;
            self.held_global[i] = fetched;
        }
        let arrivals = self.channel.uplink.receive(t)?;
        if t > self.uplink_delay && arrivals.len() != self.clients.len() {
            return Err(Error::invariant(format!(
                "round {t}: expected uploads from {} clients, got {}",
                self.clients.len(),
                arrivals.len()
            )));
        }
        for (i, uploads) in &arrivals {
            self.server.absorb(*i, uploads)?;
        }
        self.server.solve()?;
        self.channel.downlink.publish(t + 1, self.server.global.clone())?;
        self.round = t;
        Ok(traces)
    }

    fn fetch_counts(&self) -> Vec<usize> {
        self.channel.downlink.fetch_counts().to_vec()
    }
}

fn run_with(streams: &[Vec<Sample>], cfg: &ErmConfig, policy: CounterpartPolicy, rounds: usize) -> Result<RunOutcome> {
    if rounds == 0 {
        return Err(Error::config("need at least one round"));
    }
    let mut cfg = cfg.clone();
    cfg.policy = policy;
    let mut fed = ErmFederation::new(&cfg)?;
    drive(&mut fed, streams, rounds, 1)
}

pub fn run_fedres_erm(streams: &[Vec<Sample>], cfg: &ErmConfig, rounds: usize) -> Result<RunOutcome> {
    run_with(streams, cfg, CounterpartPolicy::Refit, rounds)
}

pub fn run_fictitious_play(streams: &[Vec<Sample>], cfg: &ErmConfig, rounds: usize) -> Result<RunOutcome> {
    run_with(streams, cfg, CounterpartPolicy::Frozen, rounds)
}
