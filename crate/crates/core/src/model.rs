//! Parameter vectors, the joint residual predictor and its squared loss.
//!
//! A client's prediction is the sum of two linear scores: the shared global
//! model applied to the global features and the client's own local model
//! applied to its local features. Every learner in the crate evaluates losses
//! and gradients through the functions in this module.

use crate::error::{check_dim, Error, Result};

/// One observation for one client at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x_global: Vec<f64>,
    pub x_local: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x_global: Vec<f64>, x_local: Vec<f64>, y: f64) -> Result<Self> {
        let finite = x_global.iter().chain(&x_local).all(|v| v.is_finite()) && y.is_finite();
        if !finite {
            return Err(Error::config("sample contains a non-finite value"));
        }
        Ok(Sample {
            x_global,
            x_local,
            y,
        })
    }
}

/// The server's model over global features.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    pub w: Vec<f64>,
}

impl GlobalParams {
    pub fn zeros(dim: usize) -> Self {
        GlobalParams { w: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// A client's personalized model over its local features.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalParams {
    pub client: usize,
    pub w: Vec<f64>,
}

impl LocalParams {
    pub fn zeros(client: usize, dim: usize) -> Self {
        LocalParams {
            client,
            w: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// What a residual-learning client uploads instead of its local model: the
/// global features, the local model's score on the local features, and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMessage {
    pub client: usize,
    pub sent_at: usize,
    pub x_global: Vec<f64>,
    pub local_prediction: f64,
    pub y: f64,
}

impl ResidualMessage {
    pub fn from_sample(wl: &LocalParams, s: &Sample, sent_at: usize) -> Result<Self> {
        check_dim("local features", wl.dim(), s.x_local.len())?;
        Ok(ResidualMessage {
            client: wl.client,
            sent_at,
            x_global: s.x_global.clone(),
            local_prediction: dot(&wl.w, &s.x_local),
            y: s.y,
        })
    }
}

/// Ball radius and step sizes shared by the gradient learners.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub radius: f64,
    pub eta_global: f64,
    pub eta_local: Vec<f64>,
}

impl HyperParams {
    pub fn uniform(radius: f64, eta_global: f64, eta_local: f64, clients: usize) -> Self {
        HyperParams {
            radius,
            eta_global,
            eta_local: vec![eta_local; clients],
        }
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.radius) {
            return Err(Error::config(format!("radius must be positive, got {}", self.radius)));
        }
        if !ok(self.eta_global) {
            return Err(Error::config(format!(
                "global step size must be positive, got {}",
                self.eta_global
            )));
        }
        check_dim("local step sizes", clients, self.eta_local.len())?;
        if let Some(bad) = self.eta_local.iter().find(|&&v| !ok(v)) {
            return Err(Error::config(format!("local step size must be positive, got {bad}")));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A loss of the form `l(y, score_global, score_local)`.
///
/// Gradients with respect to linear parameters are the partial derivative in
/// the corresponding score times that side's feature vector, so a learner only
/// needs the two scalar partials.
pub trait Loss: Clone + Send + Sync {
    fn value(&self, y: f64, score_global: f64, score_local: f64) -> f64;
    fn d_global(&self, y: f64, score_global: f64, score_local: f64) -> f64;
    fn d_local(&self, y: f64, score_global: f64, score_local: f64) -> f64;

    fn eval(&self, wg: &[f64], wl: &[f64], s: &Sample) -> Result<f64> {
        let (g, l) = scores(wg, wl, s)?;
        Ok(self.value(s.y, g, l))
    }

    fn grad_global(&self, wg: &[f64], wl: &[f64], s: &Sample) -> Result<Vec<f64>> {
        let (g, l) = scores(wg, wl, s)?;
        Ok(scale(&s.x_global, self.d_global(s.y, g, l)))
    }

    fn grad_local(&self, wg: &[f64], wl: &[f64], s: &Sample) -> Result<Vec<f64>> {
        let (g, l) = scores(wg, wl, s)?;
        Ok(scale(&s.x_local, self.d_local(s.y, g, l)))
    }

    /// Server-side global gradient using only what a client uploaded.
    fn grad_global_from_message(&self, wg: &[f64], m: &ResidualMessage) -> Result<Vec<f64>> {
        check_dim("global features", wg.len(), m.x_global.len())?;
        let g = dot(wg, &m.x_global);
        Ok(scale(&m.x_global, self.d_global(m.y, g, m.local_prediction)))
    }
}

/// `(y - score_global - score_local)^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredLoss;

impl Loss for SquaredLoss {
    fn value(&self, y: f64, score_global: f64, score_local: f64) -> f64 {
        let r = y - (score_global + score_local);
        r * r
    }

    fn d_global(&self, y: f64, score_global: f64, score_local: f64) -> f64 {
        2.0 * ((score_global + score_local) - y)
    }

    fn d_local(&self, y: f64, score_global: f64, score_local: f64) -> f64 {
        self.d_global(y, score_global, score_local)
    }
}

fn scores(wg: &[f64], wl: &[f64], s: &Sample) -> Result<(f64, f64)> {
    check_dim("global features", wg.len(), s.x_global.len())?;
    check_dim("local features", wl.len(), s.x_local.len())?;
    Ok((dot(wg, &s.x_global), dot(wl, &s.x_local)))
}

fn scale(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| c * v).collect()
}

pub fn predict_joint(wg: &GlobalParams, wl: &LocalParams, s: &Sample) -> Result<f64> {
    let (g, l) = scores(&wg.w, &wl.w, s)?;
    Ok(g + l)
}

pub fn loss(wg: &GlobalParams, wl: &LocalParams, s: &Sample) -> Result<f64> {
    SquaredLoss.eval(&wg.w, &wl.w, s)
}

pub fn grad_global(wg: &GlobalParams, wl: &LocalParams, s: &Sample) -> Result<Vec<f64>> {
    SquaredLoss.grad_global(&wg.w, &wl.w, s)
}

pub fn grad_local(wg: &GlobalParams, wl: &LocalParams, s: &Sample) -> Result<Vec<f64>> {
    SquaredLoss.grad_local(&wg.w, &wl.w, s)
}

pub fn grad_global_from_message(wg: &GlobalParams, m: &ResidualMessage) -> Result<Vec<f64>> {
    SquaredLoss.grad_global_from_message(&wg.w, m)
}

/// Euclidean projection onto the closed ball of radius `radius`.
///
/// The result's computed norm never exceeds `radius`, which makes the
/// projection idempotent bit for bit.
pub fn project_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::config(format!("ball radius must be positive, got {radius}")));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out, radius);
    Ok(out)
}

pub(crate) fn project_in_place(v: &mut [f64], radius: f64) {
    let n = norm(v);
    if n <= radius {
        return;
    }
    let original = v.to_vec();
    let mut factor = radius / n;
    loop {
        for (dst, src) in v.iter_mut().zip(&original) {
            *dst = src * factor;
        }
        if norm(v) <= radius {
            return;
        }
        factor = factor.next_down();
    }
}

/// Gradient step followed by projection, `w <- proj(w - eta * g)`.
pub(crate) fn projected_step(w: &mut [f64], grad: &[f64], eta: f64, radius: f64) {
    for (wi, gi) in w.iter_mut().zip(grad) {
        *wi -= eta * gi;
    }
    project_in_place(w, radius);
}

/// Step size that balances the variance and delay terms of the delayed-SGD
/// regret bound:
///
/// `min{ sqrt(S / (T P sigma2)), cbrt(S / (gamma P^3 G^2 tau^2 T)) }`
/// with `S = global_norm^2 + local_sq_norm_sum`.
///
/// `local_sq_norm_sum` is the sum over clients of the squared norms of the
/// comparator local models.
#[allow(clippy::too_many_arguments)]
pub fn suggested_step_size(
    global_norm: f64,
    local_sq_norm_sum: f64,
    clients: usize,
    rounds: usize,
    sigma2: f64,
    gamma: f64,
    grad_bound: f64,
    tau: usize,
) -> Result<f64> {
    let reals = [global_norm, local_sq_norm_sum, sigma2, gamma, grad_bound];
    if reals.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || clients == 0 || rounds == 0 || tau == 0
    {
        return Err(Error::config("step-size inputs must all be positive"));
    }
    let s = global_norm * global_norm + local_sq_norm_sum;
    let (p, t, tau) = (clients as f64, rounds as f64, tau as f64);
    let variance_branch = (s / (t * p * sigma2)).sqrt();
    let delay_branch = (s / (gamma * p.powi(3) * grad_bound * grad_bound * tau * tau * t)).cbrt();
    Ok(variance_branch.min(delay_branch))
}
