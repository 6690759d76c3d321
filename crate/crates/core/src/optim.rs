//! Box-constrained limited-memory BFGS with finite-difference gradients, and a
//! deterministic multi-start driver.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once an accepted step changes the objective by less than
    /// `tol * (1 + |f|)`.
    pub tol: f64,
    pub grad_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 8,
            max_iter: 300,
            tol: 1e-8,
            grad_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Central differences, one-sided against an active bound.
pub fn fd_gradient<F>(f: &F, x: &[f64], fx: f64, bounds: &[(f64, f64)], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut t = x.to_vec();
    for k in 0..x.len() {
        let (lo, hi) = bounds[k];
        let up = (x[k] + h).min(hi);
        let down = (x[k] - h).max(lo);
        let fu = if up > x[k] {
            t[k] = up;
            f(&t)
        } else {
            fx
        };
        let fd = if down < x[k] {
            t[k] = down;
            f(&t)
        } else {
            fx
        };
        t[k] = x[k];
        g[k] = if up > down && fu.is_finite() && fd.is_finite() {
            (fu - fd) / (up - down)
        } else {
            0.0
        };
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` over the box. Non-finite values are treated as infeasible.
pub fn lbfgs_box<F>(f: &F, x0: &[f64], bounds: &[(f64, f64)], opts: &LbfgsOptions) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    if x0.len() != bounds.len() {
        return Err(Error::Shape(format!("{} coordinates but {} bounds", x0.len(), bounds.len())));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Optimization("objective is not finite at the starting point".into()));
    }
    if n == 0 {
        return Ok(Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: true,
        });
    }
    let mut g = fd_gradient(f, &x, fx, bounds, opts.grad_step);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iter = 0;

    while iter < opts.max_iter {
        iter += 1;
        // Coordinates pinned at a bound with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..n)
            .map(|k| {
                let (lo, hi) = bounds[k];
                !((x[k] <= lo && g[k] > 0.0) || (x[k] >= hi && g[k] < 0.0))
            })
            .collect();
        let gf: Vec<f64> = (0..n).map(|k| if free[k] { g[k] } else { 0.0 }).collect();
        if gf.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }

        let mut d = two_loop(&gf, &s_hist, &y_hist);
        for k in 0..n {
            if !free[k] {
                d[k] = 0.0;
            }
        }
        if dot(&d, &gf) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            d = gf.iter().map(|v| -v).collect();
        }
        if s_hist.is_empty() {
            // First step: scale so that the largest move is modest.
            let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 1.0 {
                d.iter_mut().for_each(|v| *v /= m);
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xn, bounds);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * decrease.min(0.0) {
                accepted = Some((xn, fnew, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, step)) = accepted else {
            if s_hist.is_empty() {
                // no descent along the steepest direction at this resolution
                converged = true;
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let gn = fd_gradient(f, &xn, fnew, bounds, opts.grad_step);
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let change = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if dot(&step, &yv) > 1e-12 * dot(&yv, &yv).sqrt() * dot(&step, &step).sqrt() {
            s_hist.push(step);
            y_hist.push(yv);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if change.abs() <= opts.tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        iterations: iter,
        converged,
    })
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rho * dot(&s_hist[i], &q);
        for (qk, yk) in q.iter_mut().zip(&y_hist[i]) {
            *qk -= alphas[i] * yk;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..m {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qk, sk) in q.iter_mut().zip(&s_hist[i]) {
            *qk += (alphas[i] - beta) * sk;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Random Latin hypercube in `[0,1]^p` (one point per stratum and axis).
pub fn random_lhd(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; p]; n];
    for l in 0..p {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, k) in perm.into_iter().enumerate() {
            pts[i][l] = (k as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub index: usize,
    pub start: Vec<f64>,
    pub result: std::result::Result<Minimum, String>,
}

/// Run `lbfgs_box` from each start in parallel. The best converged result
/// wins, ties going to the lowest start index; unconverged runs are used only
/// if none converged.
pub fn multi_start<F>(f: &F, starts: &[Vec<f64>], bounds: &[(f64, f64)], opts: &LbfgsOptions) -> (Option<usize>, Vec<StartOutcome>)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .enumerate()
        .map(|(index, s)| StartOutcome {
            index,
            start: s.clone(),
            result: lbfgs_box(f, s, bounds, opts).map_err(|e| e.to_string()),
        })
        .collect();
    let pick = |want_converged: bool| {
        let mut best: Option<(usize, f64)> = None;
        for o in &outcomes {
            if let Ok(m) = &o.result {
                if (m.converged || !want_converged) && m.value.is_finite() && best.is_none_or(|(_, v)| m.value < v) {
                    best = Some((o.index, m.value));
                }
            }
        }
        best.map(|(i, _)| i)
    };
    let best = pick(true).or_else(|| pick(false));
    (best, outcomes)
}

/// Starting points drawn from a seeded Latin hypercube over the box.
pub fn lhd_starts(bounds: &[(f64, f64)], n_starts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_lhd(n_starts, bounds.len(), &mut rng)
        .into_iter()
        .map(|u| u.iter().zip(bounds).map(|(u, (a, b))| a + (b - a) * u).collect())
        .collect()
}
