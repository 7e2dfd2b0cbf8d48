//! Federated contextual bandits with epsilon-greedy exploration.
//!
//! Every `B` rounds (`t = B, 2B, ...`) each client picks an action uniformly
//! and feeds `(x(a), r(a))` to the federated regression learner as one
//! supervised sample. On all other rounds it plays the arg-max of the
//! predicted reward under the pair it would predict with next and the
//! learner is left alone.
//! The learner therefore advances one of its own rounds per exploration
//! round, and its delays are counted in exploration rounds.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{check_dim, Error, Result};
use crate::federation::{Federation, RoundTrace};
use crate::model::{dot, GlobalParams, LocalParams, Sample};
use crate::rng::{substream, Rng};

/// Per-action contexts for one client at one round, with the reward every
/// action would have earned.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRound {
    pub contexts: Vec<(Vec<f64>, Vec<f64>)>,
    pub rewards: Vec<f64>,
}

impl BanditRound {
    pub fn actions(&self) -> usize {
        self.contexts.len()
    }
}

/// A realizable linear reward model: the mean reward of an action is
/// `clip(w_g . x_g + w_i . x_l, 0, 1)`, and realized rewards add Gaussian
/// noise and are clipped again.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    pub actions: usize,
    pub global_star: Vec<f64>,
    pub local_star: Vec<Vec<f64>>,
    pub noise_std: f64,
}

impl BanditEnv {
    pub fn new(actions: usize, global_star: Vec<f64>, local_star: Vec<Vec<f64>>, noise_std: f64) -> Result<Self> {
        if actions < 2 {
            return Err(Error::config("a bandit needs at least two actions"));
        }
        if local_star.is_empty() {
            return Err(Error::config("need at least one client"));
        }
        if global_star.is_empty() {
            return Err(Error::config("global contexts need at least the constant feature"));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::config(format!("noise level must be nonnegative, got {noise_std}")));
        }
        Ok(BanditEnv {
            actions,
            global_star,
            local_star,
            noise_std,
        })
    }

    /// Draws true parameters: the constant global feature carries weight 0.5,
    /// every other weight is uniform in `+-0.5 / sqrt(m)` for `m` varying features.
    pub fn random(actions: usize, clients: usize, global_dim: usize, local_dim: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if global_dim == 0 {
            return Err(Error::config("global contexts need at least the constant feature"));
        }
        let mut rng = substream(seed, "bandit-parameters");
        let varying = (global_dim - 1 + local_dim).max(1) as f64;
        let u = Uniform::new_inclusive(-0.5 / varying.sqrt(), 0.5 / varying.sqrt());
        let mut global_star = vec![0.5];
        global_star.extend((1..global_dim).map(|_| u.sample(&mut rng)));
        let local_star = (0..clients)
            .map(|_| (0..local_dim).map(|_| u.sample(&mut rng)).collect())
            .collect();
        Self::new(actions, global_star, local_star, noise_std)
    }

    pub fn clients(&self) -> usize {
        self.local_star.len()
    }

    pub fn global_dim(&self) -> usize {
        self.global_star.len()
    }

    pub fn local_dims(&self) -> Vec<usize> {
        self.local_star.iter().map(Vec::len).collect()
    }

    pub fn mean_reward(&self, client: usize, x_global: &[f64], x_local: &[f64]) -> Result<f64> {
        let wl = self
            .local_star
            .get(client)
            .ok_or_else(|| Error::config(format!("unknown client {client}")))?;
        check_dim("global context", self.global_dim(), x_global.len())?;
        check_dim("local context", wl.len(), x_local.len())?;
        Ok((dot(&self.global_star, x_global) + dot(wl, x_local)).clamp(0.0, 1.0))
    }

    /// True mean reward of every action in `round`.
    pub fn means(&self, client: usize, round: &BanditRound) -> Result<Vec<f64>> {
        round
            .contexts
            .iter()
            .map(|(g, l)| self.mean_reward(client, g, l))
            .collect()
    }

    /// Contexts are `[1, U(-1,1)...]` globally and `U(-1,1)` locally.
    pub fn draw_round(&self, client: usize, contexts: &mut Rng, rewards: &mut Rng) -> Result<BanditRound> {
        let dl = self
            .local_star
            .get(client)
            .ok_or_else(|| Error::config(format!("unknown client {client}")))?
            .len();
        let u = Uniform::new_inclusive(-1.0, 1.0);
        let ctx: Vec<(Vec<f64>, Vec<f64>)> = (0..self.actions)
            .map(|_| {
                let mut g = vec![1.0];
                g.extend((1..self.global_dim()).map(|_| u.sample(contexts)));
                let l = (0..dl).map(|_| u.sample(contexts)).collect();
                (g, l)
            })
            .collect();
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::config(e.to_string()))?;
        let mut realized = Vec::with_capacity(self.actions);
        for (g, l) in &ctx {
            let m = self.mean_reward(client, g, l)?;
            realized.push((m + noise.sample(rewards)).clamp(0.0, 1.0));
        }
        Ok(BanditRound {
            contexts: ctx,
            rewards: realized,
        })
    }
}

/// Uniform action on exploration rounds (`t % period == 0`), otherwise the
/// arg-max of predicted reward with ties going to the lowest index.
pub fn choose_action(wg: &GlobalParams, wl: &LocalParams, contexts: &[(Vec<f64>, Vec<f64>)], t: usize, period: usize, rng: &mut Rng) -> Result<usize> {
    if contexts.is_empty() {
        return Err(Error::config("no actions to choose from"));
    }
    if period == 0 {
        return Err(Error::config("exploration period must be at least 1"));
    }
    if t.is_multiple_of(period) {
        return Ok(rng.gen_range(0..contexts.len()));
    }
    greedy_action(wg, wl, contexts)
}

pub fn greedy_action(wg: &GlobalParams, wl: &LocalParams, contexts: &[(Vec<f64>, Vec<f64>)]) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, (g, l)) in contexts.iter().enumerate() {
        check_dim("global context", wg.dim(), g.len())?;
        check_dim("local context", wl.dim(), l.len())?;
        let v = dot(&wg.w, g) + dot(&wl.w, l);
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

/// A federated regression learner driven by epsilon-greedy exploration.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<F: Federation> {
    learner: F,
    period: usize,
    explorations: usize,
}

impl<F: Federation> EpsilonGreedy<F> {
    pub fn new(learner: F, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::config("exploration period must be at least 1"));
        }
        Ok(EpsilonGreedy {
            learner,
            period,
            explorations: 0,
        })
    }

    pub fn is_exploration(&self, t: usize) -> bool {
        t.is_multiple_of(self.period)
    }

    pub fn learner(&self) -> &F {
        &self.learner
    }

    pub fn explorations(&self) -> usize {
        self.explorations
    }

    pub fn choose(&self, client: usize, t: usize, contexts: &[(Vec<f64>, Vec<f64>)], rng: &mut Rng) -> Result<usize> {
        let (wg, wl) = self.learner.next_models(client)?;
        choose_action(&wg, &wl, contexts, t, self.period, rng)
    }

    /// Feeds one explored sample per client to the learner. Only legal on
    /// exploration rounds.
    pub fn update(&mut self, t: usize, samples: &[Sample]) -> Result<Vec<RoundTrace>> {
        if !self.is_exploration(t) {
            return Err(Error::invariant(format!("model update attempted on greedy round {t}")));
        }
        let batches: Vec<&[Sample]> = samples.iter().map(std::slice::from_ref).collect();
        let out = self.learner.step(&batches)?;
        self.explorations += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    EpsilonGreedy { period: usize },
    Uniform,
}

/// Everything a bandit run observed, in round-major, client-minor order.
#[derive(Debug, Clone)]
pub struct BanditLog {
    pub clients: usize,
    pub rounds: Vec<BanditRound>,
    pub traces: Vec<RoundTrace>,
    pub explorations: usize,
}

impl BanditLog {
    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.traces.iter().map(|r| r.action.unwrap_or(0))
    }
}

/// Runs `rounds` bandit rounds. Contexts, realized rewards and uniform
/// draws come from separate streams of `seed`, so two policies run on the
/// same seed face identical contexts and rewards.
pub fn run_bandit<F: Federation>(env: &BanditEnv, learner: F, policy: Policy, rounds: usize, seed: u64) -> Result<BanditLog> {
    if rounds == 0 {
        return Err(Error::config("need at least one round"));
    }
    check_dim("bandit learner clients", env.clients(), learner.clients())?;
    let period = match policy {
        Policy::EpsilonGreedy { period } => period,
        Policy::Uniform => 1,
    };
    let mut agent = EpsilonGreedy::new(learner, period)?;
    let mut ctx_rng = substream(seed, "bandit-contexts");
    let mut reward_rng = substream(seed, "bandit-rewards");
    let mut action_rng = substream(seed, "bandit-actions");
    let p = env.clients();
    let mut log = BanditLog {
        clients: p,
        rounds: Vec::with_capacity(rounds * p),
        traces: Vec::with_capacity(rounds * p),
        explorations: 0,
    };
    for t in 1..=rounds {
        let mut explored = Vec::new();
        for i in 0..p {
            let round = env.draw_round(i, &mut ctx_rng, &mut reward_rng)?;
            let (wg, wl) = agent.learner().next_models(i)?;
            let a = match policy {
                Policy::Uniform => action_rng.gen_range(0..env.actions),
                Policy::EpsilonGreedy { .. } => agent.choose(i, t, &round.contexts, &mut action_rng)?,
            };
            let (g, l) = &round.contexts[a];
            let prediction = dot(&wg.w, g) + dot(&wl.w, l);
            let r = round.rewards[a];
            log.traces.push(RoundTrace {
                round: t,
                client: i,
                loss: (r - prediction) * (r - prediction),
                prediction,
                label: r,
                action: Some(a),
                reward: Some(r),
            });
            if matches!(policy, Policy::EpsilonGreedy { .. }) && agent.is_exploration(t) {
                explored.push(Sample::new(g.clone(), l.clone(), r)?);
            }
            log.rounds.push(round);
        }
        if !explored.is_empty() {
            agent.update(t, &explored)?;
        }
    }
    log.explorations = agent.explorations();
    Ok(log)
}

/// Forgone mean reward of each logged choice: `max_a f(x(a)) - f(x(a_t))`.
pub fn cb_regret_per_round(log: &BanditLog, env: &BanditEnv) -> Result<Vec<f64>> {
    check_dim("logged rounds", log.traces.len(), log.rounds.len())?;
    check_dim("bandit clients", env.clients(), log.clients)?;
    log.traces
        .iter()
        .zip(&log.rounds)
        .map(|(tr, round)| {
            let means = env.means(tr.client, round)?;
            let a = tr.action.ok_or_else(|| Error::invariant("bandit trace without an action"))?;
            let chosen = *means.get(a).ok_or_else(|| Error::invariant("logged action out of range"))?;
            Ok(means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - chosen)
        })
        .collect()
}

/// `(1/PT) sum_t sum_i [max_a f_i(x(a)) - f_i(x(a_{i,t}))]`.
pub fn cb_regret(log: &BanditLog, env: &BanditEnv) -> Result<f64> {
    let per = cb_regret_per_round(log, env)?;
    if per.is_empty() {
        return Err(Error::config("empty bandit log"));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Exploration period balancing the terms of the epsilon-greedy regret bound:
///
/// `min{ (PT / (K^4 S sigma2))^(1/5), T^(1/4) / (K^6 gamma D^4 G^2)^(1/8), T^(1/3) / (K^2 D G)^(1/3) }`
///
/// with `S` the comparator's squared norm summed over global and local models.
#[allow(clippy::too_many_arguments)]
pub fn optimal_exploration_period(clients: usize, rounds: usize, actions: usize, comparator_sq_norm: f64, sigma2: f64, gamma: f64, radius: f64, grad_bound: f64) -> Result<f64> {
    let reals = [comparator_sq_norm, sigma2, gamma, radius, grad_bound];
    if reals.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || clients == 0 || rounds == 0 || actions == 0 {
        return Err(Error::config("exploration-period inputs must all be positive"));
    }
    let (p, t, k) = (clients as f64, rounds as f64, actions as f64);
    let a = (p * t / (k.powi(4) * comparator_sq_norm * sigma2)).powf(0.2);
    let b = t.powf(0.25) / (k.powi(6) * gamma * radius.powi(4) * grad_bound * grad_bound).powf(0.125);
    let c = t.cbrt() / (k * k * radius * grad_bound).cbrt();
    Ok(a.min(b).min(c))
}
