#![allow(dead_code)]

use fedres::model::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the oracles free of the library's distributions.
    let u: f64 = r.gen_range(f64::EPSILON..1.0);
    let v: f64 = r.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

pub fn vec_in(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

pub fn random_streams(seed: u64, global_dim: usize, local_dims: &[usize], len: usize) -> Vec<Vec<Sample>> {
    let mut r = rng(seed);
    local_dims
        .iter()
        .map(|&dl| {
            (0..len)
                .map(|_| {
                    let g = vec_in(&mut r, global_dim, 1.0);
                    let l = vec_in(&mut r, dl, 1.0);
                    let y = r.gen_range(-1.0..1.0);
                    Sample::new(g, l, y).unwrap()
                })
                .collect()
        })
        .collect()
}

pub fn ip(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn project(w: &mut [f64], d: f64) {
    let n = ip(w, w).sqrt();
    if n > d {
        let f = d / n;
        for x in w.iter_mut() {
            *x *= f;
        }
    }
}

/// Simultaneous projected SGD on `(w^g, w_1..w_P)` with no delay; the global
/// step uses the sum of the clients' global gradients.
pub struct JointRun {
    pub losses: Vec<f64>,
    pub global: Vec<f64>,
    pub locals: Vec<Vec<f64>>,
}

pub fn joint_pgd(streams: &[Vec<Sample>], eta: f64, eta_l: f64, d: f64, rounds: usize) -> JointRun {
    let p = streams.len();
    let mut wg = vec![0.0; streams[0][0].x_global.len()];
    let mut wl: Vec<Vec<f64>> = streams.iter().map(|s| vec![0.0; s[0].x_local.len()]).collect();
    let mut losses = Vec::new();
    for t in 0..rounds {
        let mut gsum: Option<Vec<f64>> = None;
        let mut new_l = wl.clone();
        for i in 0..p {
            let s = &streams[i][t];
            let a = ip(&wg, &s.x_global);
            let b = ip(&wl[i], &s.x_local);
            let r = s.y - (a + b);
            losses.push(r * r);
            let c = 2.0 * ((a + b) - s.y);
            let gg: Vec<f64> = s.x_global.iter().map(|x| c * x).collect();
            gsum = Some(match gsum {
                None => gg,
                Some(mut acc) => {
                    for k in 0..acc.len() {
                        acc[k] += gg[k];
                    }
                    acc
                }
            });
            for k in 0..new_l[i].len() {
                new_l[i][k] -= eta_l * (c * s.x_local[k]);
            }
            project(&mut new_l[i], d);
        }
        let g = gsum.unwrap();
        for k in 0..wg.len() {
            wg[k] -= eta * g[k];
        }
        project(&mut wg, d);
        wl = new_l;
    }
    JointRun {
        losses,
        global: wg,
        locals: wl,
    }
}

/// Aligned delayed residual SGD written from full parameter histories:
/// batch `n` of client `i` is predicted with `(G[n - beta_i], L_i[n])`; the
/// local step at `n` uses the gradient of batch `n - tau_i`; the server step
/// at `n` sums the gradients of batches sent at `n - alpha_i`, each taken at
/// `(G[s - beta_i], L_i[s])`. `G[r]` for `r <= 1` is the origin.
pub struct DelayedRun {
    pub losses: Vec<f64>,
    pub global_history: Vec<Vec<f64>>,
    pub local_history: Vec<Vec<Vec<f64>>>,
}

#[allow(clippy::too_many_arguments)]
pub fn delayed_sgd(
    streams: &[Vec<Sample>],
    alpha: &[usize],
    beta: &[usize],
    eta: f64,
    eta_l: f64,
    d: f64,
    b: usize,
    batches: usize,
) -> DelayedRun {
    let p = streams.len();
    let dg = streams[0][0].x_global.len();
    // index 0 unused, G[1] = init
    let mut big_g: Vec<Vec<f64>> = vec![vec![0.0; dg]; 2];
    let mut big_l: Vec<Vec<Vec<f64>>> = streams
        .iter()
        .map(|s| vec![vec![0.0; s[0].x_local.len()]; 2])
        .collect();
    let g_at = |h: &Vec<Vec<f64>>, r: i64| -> Vec<f64> { h[r.max(1) as usize].clone() };
    let batch = |i: usize, n: usize| &streams[i][(n - 1) * b..n * b];
    let mut losses = Vec::new();
    for n in 1..=batches {
        for i in 0..p {
            let wg = g_at(&big_g, n as i64 - beta[i] as i64);
            for s in batch(i, n) {
                let r = s.y - (ip(&wg, &s.x_global) + ip(&big_l[i][n], &s.x_local));
                losses.push(r * r);
            }
            let mut next = big_l[i][n].clone();
            let tau = alpha[i] + beta[i];
            if n > tau {
                let s = n - tau;
                let wg_s = g_at(&big_g, s as i64 - beta[i] as i64);
                let wl_s = &big_l[i][s];
                let mut acc: Option<Vec<f64>> = None;
                for x in batch(i, s) {
                    let a = ip(&wg_s, &x.x_global);
                    let c = 2.0 * ((a + ip(wl_s, &x.x_local)) - x.y);
                    let g: Vec<f64> = x.x_local.iter().map(|v| c * v).collect();
                    acc = Some(match acc {
                        None => g,
                        Some(mut a) => {
                            for k in 0..a.len() {
                                a[k] += g[k];
                            }
                            a
                        }
                    });
                }
                let mut g = acc.unwrap();
                for v in g.iter_mut() {
                    *v /= b as f64;
                }
                for k in 0..next.len() {
                    next[k] -= eta_l * g[k];
                }
                project(&mut next, d);
            }
            big_l[i].push(next);
        }
        let mut total: Option<Vec<f64>> = None;
        for i in 0..p {
            if n <= alpha[i] {
                continue;
            }
            let s = n - alpha[i];
            let wg_s = g_at(&big_g, s as i64 - beta[i] as i64);
            let wl_s = &big_l[i][s];
            let mut acc: Option<Vec<f64>> = None;
            for x in batch(i, s) {
                let a = ip(&wg_s, &x.x_global);
                let c = 2.0 * ((a + ip(wl_s, &x.x_local)) - x.y);
                let g: Vec<f64> = x.x_global.iter().map(|v| c * v).collect();
                acc = Some(match acc {
                    None => g,
                    Some(mut a) => {
                        for k in 0..a.len() {
                            a[k] += g[k];
                        }
                        a
                    }
                });
            }
            let mut g = acc.unwrap();
            for v in g.iter_mut() {
                *v /= b as f64;
            }
            total = Some(match total {
                None => g,
                Some(mut a) => {
                    for k in 0..a.len() {
                        a[k] += g[k];
                    }
                    a
                }
            });
        }
        let mut next = big_g[n].clone();
        if let Some(g) = total {
            for k in 0..next.len() {
                next[k] -= eta * g[k];
            }
            project(&mut next, d);
        }
        big_g.push(next);
    }
    DelayedRun {
        losses,
        global_history: big_g,
        local_history: big_l,
    }
}

/// `(G + ridge I) w = rhs` by Gaussian elimination with partial pivoting.
pub fn ridge_solve(gram: &[f64], rhs: &[f64], ridge: f64) -> Vec<f64> {
    let n = rhs.len();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| gram[i * n + j] + if i == j { ridge } else { 0.0 }).collect();
            row.push(rhs[i]);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap())
            .unwrap();
        a.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..=n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = a[i][n];
        for k in i + 1..n {
            s -= a[i][k] * w[k];
        }
        w[i] = s / a[i][i];
    }
    w
}

/// Minimum-norm unconstrained least squares `argmin sum (y - w.u - c)^2`
/// over rows `(u, c, y)`; underdetermined systems are solved in dual form.
pub fn ls_fit(rows: &[(Vec<f64>, f64, f64)], dim: usize) -> Vec<f64> {
    if rows.len() < dim {
        let n = rows.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = ip(&rows[i].0, &rows[j].0);
            }
        }
        let r: Vec<f64> = rows.iter().map(|(_, c, y)| y - c).collect();
        let a = ridge_solve(&k, &r, 0.0);
        let mut w = vec![0.0; dim];
        for (ai, (u, _, _)) in a.iter().zip(rows) {
            for k in 0..dim {
                w[k] += ai * u[k];
            }
        }
        return w;
    }
    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (u, c, y) in rows {
        for i in 0..dim {
            rhs[i] += u[i] * (y - c);
            for j in 0..dim {
                gram[i * dim + j] += u[i] * u[j];
            }
        }
    }
    ridge_solve(&gram, &rhs, 1e-10)
}

pub fn ls_objective(rows: &[Vec<f64>], targets: &[f64], w: &[f64]) -> f64 {
    rows.iter()
        .zip(targets)
        .map(|(x, y)| {
            let r = y - ip(x, w);
            r * r
        })
        .sum()
}

/// Projected gradient descent with step `1 / (2 lambda_max)` from the origin.
pub fn pgd_ls(rows: &[Vec<f64>], targets: &[f64], d: f64, iters: usize) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut gram = vec![0.0; dim * dim];
    for x in rows {
        for i in 0..dim {
            for j in 0..dim {
                gram[i * dim + j] += x[i] * x[j];
            }
        }
    }
    // Power iteration for the largest eigenvalue.
    let mut v = vec![1.0; dim];
    let mut lam = 0.0;
    for _ in 0..200 {
        let mut nv = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                nv[i] += gram[i * dim + j] * v[j];
            }
        }
        lam = ip(&nv, &nv).sqrt();
        if lam == 0.0 {
            break;
        }
        v = nv.iter().map(|x| x / lam).collect();
    }
    let step = if lam > 0.0 { 0.5 / lam } else { 0.0 };
    let mut w = vec![0.0; dim];
    for _ in 0..iters {
        let mut g = vec![0.0; dim];
        for (x, y) in rows.iter().zip(targets) {
            let r = ip(x, &w) - y;
            for k in 0..dim {
                g[k] += 2.0 * r * x[k];
            }
        }
        for k in 0..dim {
            w[k] -= step * g[k];
        }
        project(&mut w, d);
    }
    w
}
