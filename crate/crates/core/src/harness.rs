//! Seeded experiment runner: builds a dataset per rollout, runs one learner,
//! and reports training loss, test accuracy and average regret as CSV rows.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bandit::{cb_regret, run_bandit, BanditEnv, Policy};
use crate::baselines::{central_config, central_sample, central_streams, independent_config, independent_sample, independent_streams};
use crate::datagen::{gen_appendix_c, gen_example2, partition_federated, read_libsvm_file, ClientData, Example2, FederatedDataset, MulticlassCorpus, PartitionConfig};
use crate::delay::DelayConfig;
use crate::erm::{CounterpartPolicy, ErmConfig, ErmFederation};
use crate::error::{check_dim, Error, Result};
use crate::federation::{mean_loss, Federation, RoundTrace, RunOutcome};
use crate::linalg::GramFactor;
use crate::minibatch::{batch_delays, drive_batched, run_batched};
use crate::model::{dot, norm, GlobalParams, HyperParams, Sample};
use crate::rng::substream;
use crate::sgd::{SgdConfig, SgdFederation, SgdVariant};

pub const CSV_HEADER: &str =
    "rollout,algo,clients,delay_up,delay_down,batch,rounds,axis_value,train_loss,test_accuracy,avg_regret";

pub const DEFAULT_RADIUS: f64 = 100.0;

/// Objective tolerance and iteration cap of the offline comparator fit.
pub const COMPARATOR_TOL: f64 = 1e-8;
pub const COMPARATOR_MAX_PASSES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    Independent,
    Central,
    FedresSgd,
    FedresErm,
    Fictitious,
    FedresSgdMisaligned,
    FedresSgdAsymmetric,
}

impl Algo {
    pub const ALL: [Algo; 7] = [
        Algo::Independent,
        Algo::Central,
        Algo::FedresSgd,
        Algo::FedresErm,
        Algo::Fictitious,
        Algo::FedresSgdMisaligned,
        Algo::FedresSgdAsymmetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Independent => "independent",
            Algo::Central => "central",
            Algo::FedresSgd => "fedres-sgd",
            Algo::FedresErm => "fedres-erm",
            Algo::Fictitious => "fictitious",
            Algo::FedresSgdMisaligned => "fedres-sgd-misaligned",
            Algo::FedresSgdAsymmetric => "fedres-sgd-asymmetric",
        }
    }

    fn sgd_variant(self) -> Option<SgdVariant> {
        match self {
            Algo::FedresSgd => Some(SgdVariant::Aligned),
            Algo::FedresSgdMisaligned => Some(SgdVariant::Misaligned),
            Algo::FedresSgdAsymmetric => Some(SgdVariant::Asymmetric),
            _ => None,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A multiclass LIBSVM corpus split into per-client binary tasks.
    Libsvm {
        path: PathBuf,
        max_per_label: usize,
        test_fraction: f64,
    },
    /// Example-2 regression: shared global shift of norm `global_norm`,
    /// client shifts `+-v` with `|v| = shift_norm`, random directions per rollout.
    Example2 {
        dim: usize,
        shift_norm: f64,
        global_norm: f64,
        noise_std: f64,
        test_per_client: usize,
    },
    /// The single-client two-block stream; requires one client.
    AppendixC { test_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub clients: usize,
    pub rounds: usize,
    pub delay_up: usize,
    pub delay_down: usize,
    /// Overrides the scalar delays when set.
    pub per_client_delays: Option<DelayConfig>,
    pub batch: usize,
    /// Default `0.5 / sqrt(rounds)` for both.
    pub eta: Option<f64>,
    pub eta_local: Option<f64>,
    pub radius: f64,
    pub rollouts: usize,
    pub base_seed: u64,
    pub source: DataSource,
    pub parallel: bool,
    pub with_regret: bool,
}

impl ExperimentConfig {
    pub fn new(algo: Algo, clients: usize, rounds: usize, source: DataSource) -> Self {
        ExperimentConfig {
            algo,
            clients,
            rounds,
            delay_up: 0,
            delay_down: 0,
            per_client_delays: None,
            batch: 1,
            eta: None,
            eta_local: None,
            radius: DEFAULT_RADIUS,
            rollouts: 1,
            base_seed: 0,
            source,
            parallel: true,
            with_regret: true,
        }
    }

    pub fn delays(&self) -> DelayConfig {
        self.per_client_delays
            .clone()
            .unwrap_or_else(|| DelayConfig::uniform(self.clients, self.delay_up, self.delay_down))
    }

    pub fn hyper(&self) -> HyperParams {
        let default = 0.5 / (self.rounds.max(1) as f64).sqrt();
        let eta = self.eta.unwrap_or(default);
        HyperParams::uniform(self.radius, eta, self.eta_local.unwrap_or(eta), self.clients)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.rounds == 0 || self.rollouts == 0 {
            return Err(Error::config("clients, rounds and rollouts must be positive"));
        }
        if self.batch == 0 || self.rounds % self.batch != 0 {
            return Err(Error::config(format!(
                "batch size {} must divide the round count {}",
                self.batch, self.rounds
            )));
        }
        self.hyper().validate(self.clients)?;
        let delays = self.delays();
        delays.validate(self.clients)?;
        if matches!(self.algo, Algo::FedresErm | Algo::Fictitious) && delays.as_uniform().is_none() {
            return Err(Error::config("ERM learners need the same delays for every client"));
        }
        if matches!(self.source, DataSource::AppendixC { .. }) && self.clients != 1 {
            return Err(Error::config("the two-block stream has exactly one client"));
        }
        if let DataSource::Example2 { dim, .. } = self.source {
            if dim == 0 {
                return Err(Error::config("feature dimension must be positive"));
            }
        }
        Ok(())
    }
}

/// A fixed global model and one local model per client.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub global: Vec<f64>,
    pub locals: Vec<Vec<f64>>,
}

impl Comparator {
    pub fn loss(&self, client: usize, s: &Sample) -> f64 {
        let r = s.y - dot(&self.global, &s.x_global) - dot(&self.locals[client], &s.x_local);
        r * r
    }
}

/// Mean joint squared loss of `(global, locals)` over all client data.
pub fn joint_objective(data: &[Vec<Sample>], c: &Comparator) -> f64 {
    let n: usize = data.iter().map(Vec::len).sum();
    let total: f64 = data
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.iter().map(move |s| c.loss(i, s)))
        .sum();
    total / n.max(1) as f64
}

/// Best fixed pair in hindsight on `data`, by alternating exact solves of the
/// global block and every local block until a pass improves the mean
/// objective by less than `tol`.
pub fn fit_comparator(data: &[Vec<Sample>], radius: f64, tol: f64, max_passes: usize) -> Result<Comparator> {
    let p = data.len();
    let first = data
        .iter()
        .find_map(|d| d.first())
        .ok_or_else(|| Error::config("no data to fit a comparator on"))?;
    let dg = first.x_global.len();
    let local_dims: Vec<usize> = data
        .iter()
        .map(|d| d.first().map_or(0, |s| s.x_local.len()))
        .collect();

    let mut server = Vec::with_capacity(p);
    let mut clients = Vec::with_capacity(p);
    let mut global_gram = vec![0.0; dg * dg];
    for (d, &dl) in data.iter().zip(&local_dims) {
        let mut s_acc = crate::erm::SideAccumulator::new(dg, dl);
        let mut c_acc = crate::erm::SideAccumulator::new(dl, dg);
        for s in d {
            s_acc.add_refit(&s.x_global, &s.x_local, s.y)?;
            c_acc.add_refit(&s.x_local, &s.x_global, s.y)?;
        }
        for (g, v) in global_gram.iter_mut().zip(s_acc.gram()) {
            *g += v;
        }
        server.push(s_acc);
        clients.push(c_acc);
    }
    let global_factor = GramFactor::new(&global_gram, dg)?;
    let local_factors = clients
        .iter()
        .zip(&local_dims)
        .map(|(c, &dl)| GramFactor::new(c.gram(), dl))
        .collect::<Result<Vec<_>>>()?;

    let mut c = Comparator {
        global: vec![0.0; dg],
        locals: local_dims.iter().map(|&d| vec![0.0; d]).collect(),
    };
    let mut prev = joint_objective(data, &c);
    for _ in 0..max_passes {
        let mut rhs = vec![0.0; dg];
        for (acc, wl) in server.iter().zip(&c.locals) {
            for (r, v) in rhs.iter_mut().zip(acc.rhs(wl)?) {
                *r += v;
            }
        }
        c.global = global_factor.solve(&rhs, radius, 1e-12)?;
        for ((acc, f), wl) in clients.iter().zip(&local_factors).zip(c.locals.iter_mut()) {
            *wl = f.solve(&acc.rhs(&c.global)?, radius, 1e-12)?;
        }
        let obj = joint_objective(data, &c);
        let done = prev - obj <= tol;
        prev = obj;
        if done {
            break;
        }
    }
    Ok(c)
}

/// `(1/PT) sum [loss played - loss of comparator]` where the sample behind
/// trace `(round, client)` is `streams[client][round - 1]`.
pub fn compute_regret(traces: &[RoundTrace], streams: &[Vec<Sample>], comparator: &Comparator) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::config("empty trace"));
    }
    check_dim("comparator local models", streams.len(), comparator.locals.len())?;
    let mut total = 0.0;
    for tr in traces {
        let s = streams
            .get(tr.client)
            .and_then(|st| st.get(tr.round.wrapping_sub(1)))
            .ok_or_else(|| Error::invariant(format!("no sample behind trace ({}, {})", tr.round, tr.client)))?;
        check_dim("comparator global model", s.x_global.len(), comparator.global.len())?;
        check_dim("comparator local model", s.x_local.len(), comparator.locals[tr.client].len())?;
        total += tr.loss - comparator.loss(tr.client, s);
    }
    Ok(total / traces.len() as f64)
}

/// Fraction of test samples whose label sign the joint prediction matches.
pub fn test_accuracy(held: &[(GlobalParams, crate::model::LocalParams)], tests: &[Vec<Sample>]) -> f64 {
    let mut hit = 0usize;
    let mut n = 0usize;
    for ((g, l), t) in held.iter().zip(tests) {
        for s in t {
            let p = dot(&g.w, &s.x_global) + dot(&l.w, &s.x_local);
            hit += usize::from((p > 0.0) == (s.y > 0.0));
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub rollout: usize,
    pub algo: Algo,
    pub clients: usize,
    pub delay_up: usize,
    pub delay_down: usize,
    pub batch: usize,
    pub rounds: usize,
    pub axis_value: Option<f64>,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub avg_regret: f64,
}

impl RolloutResult {
    pub fn csv_line(&self) -> String {
        let axis = self.axis_value.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.rollout,
            self.algo,
            self.clients,
            self.delay_up,
            self.delay_down,
            self.batch,
            self.rounds,
            axis,
            self.train_loss,
            self.test_accuracy,
            self.avg_regret
        )
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[RolloutResult]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn to_csv(rows: &[RolloutResult]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Dataset for one rollout.
pub fn build_dataset(cfg: &ExperimentConfig, corpus: Option<&MulticlassCorpus>, seed: u64) -> Result<FederatedDataset> {
    match &cfg.source {
        DataSource::Libsvm {
            max_per_label,
            test_fraction,
            ..
        } => {
            let corpus = corpus.ok_or_else(|| Error::config("corpus not loaded"))?;
            let pc = PartitionConfig {
                clients: cfg.clients,
                max_per_label: *max_per_label,
                test_fraction: *test_fraction,
            };
            partition_federated(corpus, &pc, seed)
        }
        DataSource::Example2 {
            dim,
            shift_norm,
            global_norm,
            noise_std,
            test_per_client,
        } => {
            let mut rng = substream(seed, "example2-parameters");
            let mut direction = |scale: f64| -> Vec<f64> {
                let v: Vec<f64> = (0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm(&v);
                v.iter().map(|x| x * scale / n).collect()
            };
            let u_global = direction(*global_norm);
            let v = direction(*shift_norm);
            let e2 = Example2 {
                clients: cfg.clients,
                u_global,
                v,
                noise_std: *noise_std,
                train_per_client: cfg.rounds,
                test_per_client: *test_per_client,
            };
            gen_example2(&e2, seed)
        }
        DataSource::AppendixC { test_size } => {
            let train = gen_appendix_c(cfg.rounds, seed);
            let test = gen_appendix_c(*test_size, seed ^ 0x9e37_79b9_7f4a_7c15);
            Ok(FederatedDataset {
                clients: vec![ClientData {
                    train,
                    test,
                    train_lines: Vec::new(),
                    test_lines: Vec::new(),
                    negative_class: None,
                }],
                global_index: vec![0, 1],
                local_index: vec![0, 1],
                merged_classes: Vec::new(),
                per_label: 0,
            })
        }
    }
}

/// Runs `algo` on per-client `streams` (original features) and returns the
/// outcome together with the test-set transform its held models expect.
pub fn run_algo(cfg: &ExperimentConfig, streams: &[Vec<Sample>], global_dim: usize, local_dims: &[usize]) -> Result<(RunOutcome, fn(&Sample) -> Sample)> {
    let hyper = cfg.hyper();
    let delays = cfg.delays();
    let b = cfg.batch;
    let t = cfg.rounds;
    match cfg.algo {
        Algo::Central => {
            let c = central_config(global_dim, cfg.clients, hyper, delays);
            Ok((run_batched(&c, &central_streams(streams), b, t)?, central_sample))
        }
        Algo::Independent => {
            let c = independent_config(global_dim, local_dims, hyper);
            Ok((run_batched(&c, &independent_streams(streams), b, t)?, independent_sample))
        }
        Algo::FedresErm | Algo::Fictitious => {
            let mut c = ErmConfig::new(global_dim, local_dims.to_vec(), cfg.radius, batch_delays(&delays, b));
            c.policy = if cfg.algo == Algo::FedresErm {
                CounterpartPolicy::Refit
            } else {
                CounterpartPolicy::Frozen
            };
            let mut fed = ErmFederation::new(&c)?;
            Ok((drive_batched(&mut fed, streams, b, t)?, Sample::clone))
        }
        algo => {
            let mut c = SgdConfig::new(global_dim, local_dims.to_vec(), hyper, delays);
            c.variant = algo.sgd_variant().expect("remaining algorithms are SGD variants");
            Ok((run_batched(&c, streams, b, t)?, Sample::clone))
        }
    }
}

/// One rollout of `cfg` with seed `base_seed + rollout`.
pub fn run_rollout(cfg: &ExperimentConfig, corpus: Option<&MulticlassCorpus>, rollout: usize, axis_value: Option<f64>) -> Result<RolloutResult> {
    let seed = cfg.base_seed.wrapping_add(rollout as u64);
    let ds = build_dataset(cfg, corpus, seed)?;
    let streams = ds.streams(cfg.rounds, seed)?;
    let (out, transform) = run_algo(cfg, &streams, ds.global_dim(), &ds.local_dims())?;
    let tests: Vec<Vec<Sample>> = ds
        .clients
        .iter()
        .map(|c| c.test.iter().map(transform).collect())
        .collect();
    let avg_regret = if cfg.with_regret {
        let comp = fit_comparator(&streams, cfg.radius, COMPARATOR_TOL, COMPARATOR_MAX_PASSES)?;
        compute_regret(&out.traces, &streams, &comp)?
    } else {
        f64::NAN
    };
    let delays = cfg.delays();
    Ok(RolloutResult {
        rollout,
        algo: cfg.algo,
        clients: cfg.clients,
        delay_up: delays.max_uplink(),
        delay_down: delays.max_downlink(),
        batch: cfg.batch,
        rounds: cfg.rounds,
        axis_value,
        train_loss: mean_loss(&out.traces),
        test_accuracy: test_accuracy(&out.held, &tests),
        avg_regret,
    })
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Option<MulticlassCorpus>> {
    match &cfg.source {
        DataSource::Libsvm { path, .. } => Ok(Some(read_libsvm_file(path)?)),
        _ => Ok(None),
    }
}

fn run_loaded(cfg: &ExperimentConfig, corpus: Option<&MulticlassCorpus>, axis_value: Option<f64>) -> Result<Vec<RolloutResult>> {
    cfg.validate()?;
    let one = |r: usize| run_rollout(cfg, corpus, r, axis_value);
    if cfg.parallel {
        (0..cfg.rollouts).into_par_iter().map(one).collect()
    } else {
        (0..cfg.rollouts).map(one).collect()
    }
}

/// All rollouts of `cfg`, ordered by rollout index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RolloutResult>> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    run_loaded(cfg, corpus.as_ref(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Clients,
    /// Round trip; uplink gets `floor(v / 2)`, downlink the rest.
    Delay,
    Rounds,
    Batch,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clients" => Ok(SweepAxis::Clients),
            "delay" => Ok(SweepAxis::Delay),
            "rounds" => Ok(SweepAxis::Rounds),
            "batch" => Ok(SweepAxis::Batch),
            _ => Err(Error::config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

pub fn with_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Clients => {
            c.clients = value;
            c.per_client_delays = None;
        }
        SweepAxis::Delay => {
            c.delay_up = value / 2;
            c.delay_down = value - value / 2;
            c.per_client_delays = None;
        }
        SweepAxis::Rounds => c.rounds = value,
        SweepAxis::Batch => c.batch = value,
    }
    c
}

/// Runs every rollout at every axis value; rows are ordered by value, then rollout.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<RolloutResult>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| with_axis(cfg, axis, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let corpus = load_corpus(cfg)?;
    let mut rows = Vec::new();
    for (c, &v) in configs.iter().zip(values) {
        rows.extend(run_loaded(c, corpus.as_ref(), Some(v as f64))?);
    }
    Ok(rows)
}

/// Settings of the three-way two-block comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AppendixCConfig {
    pub rollouts: usize,
    pub rounds: usize,
    pub eta: f64,
    pub radius: f64,
    pub checkpoints: Vec<usize>,
    pub base_seed: u64,
    pub parallel: bool,
}

impl Default for AppendixCConfig {
    fn default() -> Self {
        AppendixCConfig {
            rollouts: 50,
            rounds: 20_000,
            eta: 1.0,
            radius: DEFAULT_RADIUS,
            checkpoints: vec![100, 1000, 10_000, 20_000],
            base_seed: 0,
            parallel: true,
        }
    }
}

pub const APPENDIX_C_HEADER: &str = "rollout,algo,checkpoint,avg_loss,wg0,wg1,dist";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub rollout: usize,
    pub algo: Algo,
    pub checkpoint: usize,
    /// Mean loss over rounds `1..=checkpoint`.
    pub avg_loss: f64,
    /// Server model after `checkpoint` rounds.
    pub global: Vec<f64>,
    /// Distance of `global` from the optimum `[0, 1]`.
    pub dist: f64,
}

impl CheckpointRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rollout, self.algo, self.checkpoint, self.avg_loss, self.global[0], self.global[1], self.dist
        )
    }
}

fn appendix_c_run(fed: &mut dyn Federation, stream: &[Sample], cfg: &AppendixCConfig, rollout: usize, algo: Algo) -> Result<Vec<CheckpointRow>> {
    let mut rows = Vec::new();
    let mut total = 0.0;
    for (k, s) in stream.iter().enumerate() {
        let tr = fed.step(&[std::slice::from_ref(s)])?;
        total += tr[0].loss;
        let t = k + 1;
        if cfg.checkpoints.contains(&t) {
            let g = fed.server_model().w.clone();
            let dist = (g[0] * g[0] + (g[1] - 1.0) * (g[1] - 1.0)).sqrt();
            rows.push(CheckpointRow {
                rollout,
                algo,
                checkpoint: t,
                avg_loss: total / t as f64,
                global: g,
                dist,
            });
        }
    }
    Ok(rows)
}

/// One rollout of residual SGD, residual ERM and fictitious play on the same
/// two-block stream, one client, no delay, both models starting at `[1, 0]`.
pub fn appendix_c_rollout(cfg: &AppendixCConfig, rollout: usize) -> Result<Vec<CheckpointRow>> {
    let seed = cfg.base_seed.wrapping_add(rollout as u64);
    let stream = gen_appendix_c(cfg.rounds, seed);
    let init_g = Some(vec![1.0, 0.0]);
    let init_l = Some(vec![vec![1.0, 0.0]]);

    let mut sgd = SgdConfig::new(2, vec![2], HyperParams::uniform(cfg.radius, cfg.eta, cfg.eta, 1), DelayConfig::zero(1));
    sgd.init_global = init_g.clone();
    sgd.init_local = init_l.clone();
    let mut rows = appendix_c_run(&mut SgdFederation::new(&sgd)?, &stream, cfg, rollout, Algo::FedresSgd)?;

    let mut erm = ErmConfig::new(2, vec![2], cfg.radius, DelayConfig::zero(1));
    erm.init_global = init_g;
    erm.init_local = init_l;
    rows.extend(appendix_c_run(&mut ErmFederation::new(&erm)?, &stream, cfg, rollout, Algo::FedresErm)?);
    erm.policy = CounterpartPolicy::Frozen;
    rows.extend(appendix_c_run(&mut ErmFederation::new(&erm)?, &stream, cfg, rollout, Algo::Fictitious)?);
    Ok(rows)
}

pub fn run_appendix_c(cfg: &AppendixCConfig) -> Result<Vec<CheckpointRow>> {
    if cfg.rollouts == 0 || cfg.rounds == 0 {
        return Err(Error::config("rollouts and rounds must be positive"));
    }
    if let Some(bad) = cfg.checkpoints.iter().find(|&&c| c == 0 || c > cfg.rounds) {
        return Err(Error::config(format!("checkpoint {bad} outside 1..={}", cfg.rounds)));
    }
    let per: Vec<Vec<CheckpointRow>> = if cfg.parallel {
        (0..cfg.rollouts)
            .into_par_iter()
            .map(|r| appendix_c_rollout(cfg, r))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.rollouts)
            .map(|r| appendix_c_rollout(cfg, r))
            .collect::<Result<_>>()?
    };
    Ok(per.into_iter().flatten().collect())
}

pub fn appendix_c_csv(rows: &[CheckpointRow]) -> String {
    let mut out = String::from(APPENDIX_C_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Settings of a bandit run: a random realizable environment and a residual
/// SGD learner whose delays count exploration rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditExperiment {
    pub actions: usize,
    pub clients: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub noise_std: f64,
    pub rounds: usize,
    pub delay_up: usize,
    pub delay_down: usize,
    pub eta: f64,
    pub radius: f64,
    pub policy: Policy,
    pub rollouts: usize,
    pub base_seed: u64,
}

pub const BANDIT_HEADER: &str = "rollout,policy,period,rounds,cb_regret,explorations";

#[derive(Debug, Clone, PartialEq)]
pub struct BanditRow {
    pub rollout: usize,
    pub policy: Policy,
    pub rounds: usize,
    pub cb_regret: f64,
    pub explorations: usize,
}

impl BanditRow {
    pub fn csv_line(&self) -> String {
        let (name, period) = match self.policy {
            Policy::EpsilonGreedy { period } => ("epsilon-greedy", period),
            Policy::Uniform => ("uniform", 1),
        };
        format!("{},{},{},{},{},{}", self.rollout, name, period, self.rounds, self.cb_regret, self.explorations)
    }
}

pub fn bandit_rollout(cfg: &BanditExperiment, rollout: usize) -> Result<BanditRow> {
    let seed = cfg.base_seed.wrapping_add(rollout as u64);
    let env = BanditEnv::random(cfg.actions, cfg.clients, cfg.global_dim, cfg.local_dim, cfg.noise_std, seed)?;
    let hyper = HyperParams::uniform(cfg.radius, cfg.eta, cfg.eta, cfg.clients);
    let sgd = SgdConfig::new(cfg.global_dim, env.local_dims(), hyper, DelayConfig::uniform(cfg.clients, cfg.delay_up, cfg.delay_down));
    let log = run_bandit(&env, SgdFederation::new(&sgd)?, cfg.policy, cfg.rounds, seed)?;
    Ok(BanditRow {
        rollout,
        policy: cfg.policy,
        rounds: cfg.rounds,
        cb_regret: cb_regret(&log, &env)?,
        explorations: log.explorations,
    })
}

pub fn run_bandit_experiment(cfg: &BanditExperiment) -> Result<Vec<BanditRow>> {
    if cfg.rollouts == 0 {
        return Err(Error::config("rollouts must be positive"));
    }
    (0..cfg.rollouts).into_par_iter().map(|r| bandit_rollout(cfg, r)).collect()
}

pub fn bandit_csv(rows: &[BanditRow]) -> String {
    let mut out = String::from(BANDIT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
