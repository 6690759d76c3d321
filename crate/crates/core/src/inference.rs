//! Maximum likelihood and Metropolis-within-Gibbs posterior sampling for the
//! calibration model, plus posterior summaries and posterior-averaged
//! prediction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::calib::{
    likelihood_core, likelihood_core_gls, log_prior, predict_with_core, sigmoid, CalibParams, ComputerModel,
    FieldDataset, PredictiveResult, PriorSpec, ETA_FLOOR,
};
use crate::error::{Error, Result};
use crate::optim::{lhd_starts, multi_start, LbfgsOptions};
use crate::sgasp::DiscrepancySpec;

#[derive(Debug, Clone)]
pub struct MleOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// Bounds on `ln psi_l`; by default `[ln(0.01 / w_l), ln(1000 / w_l)]`
    /// with `w_l` the width of input dimension `l`.
    pub log_psi_bounds: Option<Vec<(f64, f64)>>,
    pub log_eta_bounds: (f64, f64),
    /// Box for the logit of each calibration parameter.
    pub logit_theta_bound: f64,
    /// Hold `sigma2_delta` at this value instead of profiling it out.
    pub fixed_sigma2: Option<f64>,
    /// Hold `eta` at this value instead of estimating it.
    pub fixed_eta: Option<f64>,
    pub lbfgs: LbfgsOptions,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            n_starts: 10,
            seed: 0,
            log_psi_bounds: None,
            log_eta_bounds: (1e-9f64.ln(), 10f64.ln()),
            logit_theta_bound: 12.0,
            fixed_sigma2: None,
            fixed_eta: None,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartRecord {
    pub index: usize,
    pub converged: bool,
    /// `-inf` when the start failed.
    pub loglik: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub best_params: CalibParams,
    pub best_loglik: f64,
    pub best_start: usize,
    pub per_start: Vec<StartRecord>,
}

struct MleLayout {
    p_theta: usize,
    p_x: usize,
    estimate_eta: bool,
}

impl MleLayout {
    fn split<'a>(&self, v: &'a [f64]) -> (&'a [f64], &'a [f64], Option<f64>) {
        let (t, rest) = v.split_at(self.p_theta);
        let (psi, rest) = rest.split_at(self.p_x);
        (t, psi, if self.estimate_eta { Some(rest[0]) } else { None })
    }
}

fn logit_to_theta(u: &[f64], model: &ComputerModel) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, u)| {
            let (a, b) = model.theta_bounds().bounds(k);
            a + (b - a) * sigmoid(*u)
        })
        .collect()
}

fn theta_to_logit(theta: &[f64], model: &ComputerModel) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let (a, b) = model.theta_bounds().bounds(k);
            ((t - a) / (b - t)).ln()
        })
        .collect()
}

/// Default box on `ln psi`.
pub fn default_log_psi_bounds(data: &FieldDataset) -> Vec<(f64, f64)> {
    (0..data.p_x())
        .map(|l| {
            let w = data.domain().width(l);
            ((0.01 / w).ln(), (1000.0 / w).ln())
        })
        .collect()
}

/// Multi-start maximum likelihood. `sigma2_delta` is profiled out (or held
/// fixed) and the mean coefficients take their GLS values, so the search runs
/// over `(logit theta, ln psi, ln eta)`.
pub fn mle_fit(
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
    opts: &MleOptions,
) -> Result<MleResult> {
    if opts.n_starts == 0 {
        return Err(Error::Argument("n_starts must be positive".into()));
    }
    if let Some(s) = opts.fixed_sigma2 {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("fixed sigma2 must be positive, got {s}")));
        }
    }
    if let Some(e) = opts.fixed_eta {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(Error::Domain(format!("fixed eta must be non-negative, got {e}")));
        }
    }
    let layout = MleLayout {
        p_theta: model.p_theta(),
        p_x: data.p_x(),
        estimate_eta: opts.fixed_eta.is_none(),
    };
    let psi_bounds = opts.log_psi_bounds.clone().unwrap_or_else(|| default_log_psi_bounds(data));
    if psi_bounds.len() != data.p_x() {
        return Err(Error::Shape("one ln psi interval per input dimension is required".into()));
    }
    let lb = opts.logit_theta_bound;
    let mut bounds: Vec<(f64, f64)> = vec![(-lb, lb); layout.p_theta];
    bounds.extend(psi_bounds.iter().copied());
    if layout.estimate_eta {
        bounds.push(opts.log_eta_bounds);
    }

    let eval = |v: &[f64]| -> Result<(f64, CalibParams)> {
        let (u, lpsi, leta) = layout.split(v);
        let theta = logit_to_theta(u, model);
        let psi: Vec<f64> = lpsi.iter().map(|l| l.exp()).collect();
        let eta = match leta {
            Some(l) => l.exp(),
            None => opts.fixed_eta.unwrap_or(0.0),
        };
        let (core, beta) = likelihood_core_gls(&theta, &psi, eta, data, model, spec)?;
        let (ll, sigma2) = match opts.fixed_sigma2 {
            Some(s) => (core.loglik(s), s),
            None => {
                let s = core.sigma2_hat().max(f64::MIN_POSITIVE);
                (core.loglik(s), s)
            }
        };
        Ok((
            ll,
            CalibParams {
                theta,
                beta_delta: beta,
                psi_delta: psi,
                sigma2_delta: sigma2,
                eta,
            },
        ))
    };
    let objective = |v: &[f64]| match eval(v) {
        Ok((ll, _)) if ll.is_finite() => -ll,
        _ => f64::INFINITY,
    };

    // Starts are spread uniformly in theta (not in its logit) over the box.
    let mut unit_bounds = vec![(0.0, 1.0); layout.p_theta];
    unit_bounds.extend_from_slice(&bounds[layout.p_theta..]);
    let starts: Vec<Vec<f64>> = lhd_starts(&unit_bounds, opts.n_starts, opts.seed)
        .into_iter()
        .map(|mut s| {
            for k in 0..layout.p_theta {
                let u = s[k].clamp(1e-6, 1.0 - 1e-6);
                s[k] = (u / (1.0 - u)).ln().clamp(-lb, lb);
            }
            s
        })
        .collect();

    let (best, outcomes) = multi_start(&objective, &starts, &bounds, &opts.lbfgs);
    let per_start: Vec<StartRecord> = outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(m) => StartRecord {
                index: o.index,
                converged: m.converged,
                loglik: -m.value,
                error: None,
            },
            Err(e) => StartRecord {
                index: o.index,
                converged: false,
                loglik: f64::NEG_INFINITY,
                error: Some(e.clone()),
            },
        })
        .collect();
    let Some(best) = best else {
        let detail: Vec<String> = per_start
            .iter()
            .map(|r| format!("start {}: {}", r.index, r.error.clone().unwrap_or_else(|| "no progress".into())))
            .collect();
        return Err(Error::Optimization(format!("all starts failed ({})", detail.join("; "))));
    };
    let x = &outcomes[best].result.as_ref().expect("best start succeeded").x;
    let (best_loglik, best_params) = eval(x)?;
    Ok(MleResult {
        best_params,
        best_loglik,
        best_start: best,
        per_start,
    })
}

/// Sampler blocks of the calibration posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Theta,
    /// `(ln psi, ln(eta + floor))`.
    Kernel,
    Beta,
    /// Conjugate inverse-gamma draw of `sigma2_delta`.
    Sigma2,
}

#[derive(Debug, Clone)]
pub struct McmcOptions {
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Starting point; the multi-start MLE is used when absent.
    pub init: Option<CalibParams>,
    pub initial_scale: f64,
    pub target_rate: f64,
    /// Blocks held at their initial values.
    pub frozen: Vec<Block>,
    pub mle: MleOptions,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            samples: 50_000,
            burn_in: 10_000,
            seed: 0,
            init: None,
            initial_scale: 0.1,
            target_rate: 0.3,
            frozen: Vec::new(),
            mle: MleOptions::default(),
        }
    }
}

/// Gaussian random-walk block whose scale adapts by Robbins-Monro during burn-in.
#[derive(Debug, Clone)]
pub struct RwBlock {
    pub name: String,
    pub indices: Vec<usize>,
    log_scale: f64,
    target_rate: f64,
    adapt_steps: usize,
    accepted: u64,
    proposed: u64,
}

impl RwBlock {
    pub fn new(name: impl Into<String>, indices: Vec<usize>, scale: f64, target_rate: f64) -> Self {
        RwBlock {
            name: name.into(),
            indices,
            log_scale: scale.ln(),
            target_rate,
            adapt_steps: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn propose(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.scale();
        let mut out = x.to_vec();
        for &i in &self.indices {
            let z: f64 = StandardNormal.sample(rng);
            out[i] += s * z;
        }
        out
    }

    /// Metropolis accept/reject given the log target at the current and proposed points.
    pub fn decide(&mut self, current: f64, proposed: f64, adapt: bool, rng: &mut ChaCha8Rng) -> bool {
        let log_ratio = proposed - current;
        let prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        let accept = rng.random::<f64>() < prob;
        if adapt {
            self.adapt_steps += 1;
            self.log_scale += (prob - self.target_rate) / (self.adapt_steps as f64).powf(0.6);
        } else {
            self.proposed += 1;
            if accept {
                self.accepted += 1;
            }
        }
        accept
    }

    /// Acceptance rate after adaptation stopped.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Blockwise adaptive random-walk Metropolis on an arbitrary log density.
/// Returns all `samples` states and the post-burn-in acceptance rate per block.
pub fn rw_metropolis<F>(
    log_target: F,
    x0: &[f64],
    blocks: &[Vec<usize>],
    samples: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64,
{
    let mut lp = log_target(x0);
    if !lp.is_finite() {
        return Err(Error::Initialization("log target is not finite at the initial point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rw: Vec<RwBlock> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| RwBlock::new(format!("block{i}"), b.clone(), 0.1, 0.3))
        .collect();
    let mut x = x0.to_vec();
    let mut out = DMatrix::zeros(samples, x.len());
    for s in 0..samples {
        for b in rw.iter_mut() {
            let prop = b.propose(&x, &mut rng);
            let lp_new = log_target(&prop);
            if b.decide(lp, lp_new, s < burn_in, &mut rng) {
                x = prop;
                lp = lp_new;
            }
        }
        for (j, v) in x.iter().enumerate() {
            out[(s, j)] = *v;
        }
    }
    Ok((out, rw.iter().map(|b| b.acceptance_rate()).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    /// One row per iteration, burn-in included, columns
    /// `theta.., beta.., psi.., sigma2_delta, eta`.
    pub samples: DMatrix<f64>,
    pub burn_in: usize,
    pub acceptance_rates: Vec<(String, f64)>,
    pub rng_seed: u64,
    pub p_theta: usize,
    pub q_delta: usize,
    pub p_x: usize,
}

impl PosteriorChain {
    /// Chain holding the given parameter sets, none of them burn-in.
    pub fn from_params(params: &[CalibParams]) -> Result<Self> {
        let first = params.first().ok_or_else(|| Error::Argument("empty chain".into()))?;
        let (p_theta, q_delta, p_x) = (first.theta.len(), first.beta_delta.len(), first.psi_delta.len());
        let dim = p_theta + q_delta + p_x + 2;
        let mut samples = DMatrix::zeros(params.len(), dim);
        for (i, p) in params.iter().enumerate() {
            let row = flatten(p);
            if row.len() != dim {
                return Err(Error::Shape("parameter sets differ in shape".into()));
            }
            for (j, v) in row.into_iter().enumerate() {
                samples[(i, j)] = v;
            }
        }
        Ok(PosteriorChain {
            samples,
            burn_in: 0,
            acceptance_rates: Vec::new(),
            rng_seed: 0,
            p_theta,
            q_delta,
            p_x,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let one = |base: &str, k: usize, count: usize| {
            if count == 1 {
                base.to_string()
            } else {
                format!("{base}{}", k + 1)
            }
        };
        names.extend((0..self.p_theta).map(|k| one("theta", k, self.p_theta)));
        names.extend((0..self.q_delta).map(|k| format!("beta{}", k + 1)));
        names.extend((0..self.p_x).map(|k| one("psi", k, self.p_x)));
        names.push("sigma2_delta".into());
        names.push("eta".into());
        names
    }

    pub fn params_at(&self, i: usize) -> CalibParams {
        let row: Vec<f64> = self.samples.row(i).iter().copied().collect();
        let (t, rest) = row.split_at(self.p_theta);
        let (b, rest) = rest.split_at(self.q_delta);
        let (psi, rest) = rest.split_at(self.p_x);
        CalibParams {
            theta: t.to_vec(),
            beta_delta: b.to_vec(),
            psi_delta: psi.to_vec(),
            sigma2_delta: rest[0],
            eta: rest[1],
        }
    }

    /// Every `thin`-th row after burn-in.
    pub fn retained(&self, thin: usize) -> Vec<usize> {
        (self.burn_in..self.len()).step_by(thin.max(1)).collect()
    }
}

fn flatten(p: &CalibParams) -> Vec<f64> {
    let mut v = p.theta.clone();
    v.extend_from_slice(&p.beta_delta);
    v.extend_from_slice(&p.psi_delta);
    v.push(p.sigma2_delta);
    v.push(p.eta);
    v
}

// Sampler coordinates: [logit theta, beta, ln psi, ln(eta + floor)], sigma2 kept apart.
struct SamplerLayout {
    p_theta: usize,
    q: usize,
    p_x: usize,
}

impl SamplerLayout {
    fn dim(&self) -> usize {
        self.p_theta + self.q + self.p_x + 1
    }

    fn to_params(&self, u: &[f64], sigma2: f64, model: &ComputerModel) -> CalibParams {
        let theta = logit_to_theta(&u[..self.p_theta], model);
        let beta = u[self.p_theta..self.p_theta + self.q].to_vec();
        let psi = u[self.p_theta + self.q..self.dim() - 1].iter().map(|l| l.exp()).collect();
        let eta = (u[self.dim() - 1].exp() - ETA_FLOOR).max(0.0);
        CalibParams {
            theta,
            beta_delta: beta,
            psi_delta: psi,
            sigma2_delta: sigma2,
            eta,
        }
    }

    fn from_params(&self, p: &CalibParams, model: &ComputerModel) -> Vec<f64> {
        let mut u = theta_to_logit(&p.theta, model);
        u.extend_from_slice(&p.beta_delta);
        u.extend(p.psi_delta.iter().map(|v| v.ln()));
        u.push((p.eta + ETA_FLOOR).ln());
        u
    }
}

// The sigma2-free pieces of the log posterior at one point.
#[derive(Debug, Clone, Copy)]
struct PointEval {
    quad: f64,
    log_det: f64,
    // log prior at sigma2 = 1 plus the log Jacobian of the sampler coordinates
    rest: f64,
}

impl PointEval {
    fn log_post(&self, n: usize, sigma2: f64) -> f64 {
        let n = n as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + n * sigma2.ln() + self.log_det + self.quad / sigma2)
            - sigma2.ln()
            + self.rest
    }
}

/// Metropolis-within-Gibbs sampler for the calibration posterior.
pub fn mcmc_run(
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
    prior: &PriorSpec,
    opts: &McmcOptions,
) -> Result<PosteriorChain> {
    if opts.samples <= opts.burn_in {
        return Err(Error::Argument(format!(
            "samples ({}) must exceed burn_in ({})",
            opts.samples, opts.burn_in
        )));
    }
    if !(opts.initial_scale > 0.0) || !(opts.target_rate > 0.0 && opts.target_rate < 1.0) {
        return Err(Error::Argument("invalid proposal settings".into()));
    }
    prior.validate()?;
    let layout = SamplerLayout {
        p_theta: model.p_theta(),
        q: spec.mean_basis.len(),
        p_x: data.p_x(),
    };
    let n = data.n();

    let init = match &opts.init {
        Some(p) => p.clone(),
        None => {
            let mle_opts = MleOptions {
                seed: opts.seed,
                ..opts.mle.clone()
            };
            mle_fit(data, model, spec, &mle_opts)
                .map_err(|e| Error::Initialization(format!("MLE start failed: {e}")))?
                .best_params
        }
    };
    init.validate(model, spec).map_err(|e| Error::Initialization(e.to_string()))?;
    let mut u = layout.from_params(&init, model);
    for v in u[..layout.p_theta].iter_mut() {
        // keep the starting point strictly inside the theta box
        *v = v.clamp(-30.0, 30.0);
    }
    let mut sigma2 = init.sigma2_delta;

    let evaluate = |u: &[f64]| -> Result<Option<PointEval>> {
        let p = layout.to_params(u, 1.0, model);
        let lp = log_prior(&p, prior);
        if !lp.is_finite() {
            return Ok(None);
        }
        let core = match likelihood_core(&p.theta, &p.beta_delta, &p.psi_delta, p.eta, data, model, spec) {
            Ok(c) => c,
            Err(Error::Numerical { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut log_jac: f64 = u[layout.p_theta + layout.q..].iter().sum();
        for (k, t) in p.theta.iter().enumerate() {
            let (a, b) = model.theta_bounds().bounds(k);
            log_jac += ((t - a) * (b - t) / (b - a)).ln();
        }
        let rest = lp + log_jac;
        if !rest.is_finite() || !core.quad.is_finite() {
            return Ok(None);
        }
        Ok(Some(PointEval {
            quad: core.quad,
            log_det: core.log_det,
            rest,
        }))
    };

    let mut current = evaluate(&u)?
        .filter(|e| e.log_post(n, sigma2).is_finite())
        .ok_or_else(|| Error::Initialization("posterior is not finite at the initial point".into()))?;

    let mut blocks = Vec::new();
    let frozen = |b: Block| opts.frozen.contains(&b);
    if layout.p_theta > 0 && !frozen(Block::Theta) {
        blocks.push(RwBlock::new("theta", (0..layout.p_theta).collect(), opts.initial_scale, opts.target_rate));
    }
    if !frozen(Block::Kernel) {
        let start = layout.p_theta + layout.q;
        blocks.push(RwBlock::new("kernel", (start..layout.dim()).collect(), opts.initial_scale, opts.target_rate));
    }
    if layout.q > 0 && !frozen(Block::Beta) {
        let start = layout.p_theta;
        blocks.push(RwBlock::new("beta", (start..start + layout.q).collect(), opts.initial_scale, opts.target_rate));
    }
    let gibbs_sigma2 = !frozen(Block::Sigma2);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dim = layout.p_theta + layout.q + layout.p_x + 2;
    let mut samples = DMatrix::zeros(opts.samples, dim);
    for s in 0..opts.samples {
        let adapt = s < opts.burn_in;
        for b in blocks.iter_mut() {
            let prop = b.propose(&u, &mut rng);
            let cand = evaluate(&prop)?;
            let lp_new = cand.map_or(f64::NEG_INFINITY, |e| e.log_post(n, sigma2));
            if b.decide(current.log_post(n, sigma2), lp_new, adapt, &mut rng) {
                u = prop;
                current = cand.expect("accepted proposals are finite");
            }
        }
        if gibbs_sigma2 {
            sigma2 = draw_sigma2(n, current.quad, &mut rng)?;
        }
        let p = layout.to_params(&u, sigma2, model);
        for (j, v) in flatten(&p).into_iter().enumerate() {
            samples[(s, j)] = v;
        }
    }
    let mut acceptance_rates: Vec<(String, f64)> =
        blocks.iter().map(|b| (b.name.clone(), b.acceptance_rate())).collect();
    if gibbs_sigma2 {
        acceptance_rates.push(("sigma2_delta".into(), 1.0));
    }
    Ok(PosteriorChain {
        samples,
        burn_in: opts.burn_in,
        acceptance_rates,
        rng_seed: opts.seed,
        p_theta: layout.p_theta,
        q_delta: layout.q,
        p_x: layout.p_x,
    })
}

/// `sigma2 | rest ~ InvGamma(n / 2, quad / 2)`.
fn draw_sigma2(n: usize, quad: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = Gamma::new(n as f64 / 2.0, 2.0 / quad)
        .map_err(|e| Error::numerical(format!("inverse-gamma draw: {e}")))?;
    Ok(1.0 / g.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Medians, means and central 95% intervals of the post-burn-in samples.
pub fn posterior_summary(chain: &PosteriorChain) -> Result<PosteriorSummary> {
    let kept = chain.len().saturating_sub(chain.burn_in);
    if kept < 100 {
        return Err(Error::Argument(format!("need at least 100 post-burn-in samples, have {kept}")));
    }
    let mut out = PosteriorSummary {
        names: chain.column_names(),
        median: Vec::new(),
        mean: Vec::new(),
        lower95: Vec::new(),
        upper95: Vec::new(),
    };
    for j in 0..chain.samples.ncols() {
        let mut col: Vec<f64> = (chain.burn_in..chain.len()).map(|i| chain.samples[(i, j)]).collect();
        col.sort_by(f64::total_cmp);
        out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        out.median.push(quantile_sorted(&col, 0.5));
        out.lower95.push(quantile_sorted(&col, 0.025));
        out.upper95.push(quantile_sorted(&col, 0.975));
    }
    Ok(out)
}

/// Average the plug-in predictive over every `thin`-th post-burn-in sample.
/// The variance combines the mean within-sample variance with the spread of
/// the per-sample full means.
pub fn predict_posterior(
    chain: &PosteriorChain,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
    xstar: &DMatrix<f64>,
    thin: usize,
) -> Result<PredictiveResult> {
    if thin == 0 {
        return Err(Error::Argument("thin must be positive".into()));
    }
    let idx = chain.retained(thin);
    if idx.is_empty() {
        return Err(Error::Argument("no post-burn-in samples".into()));
    }
    let preds: Vec<PredictiveResult> = idx
        .par_iter()
        .map(|&i| {
            let p = chain.params_at(i);
            p.validate(model, spec)?;
            let core = likelihood_core(&p.theta, &p.beta_delta, &p.psi_delta, p.eta, data, model, spec)?;
            predict_with_core(&p, &core, data, model, spec, xstar)
        })
        .collect::<Result<_>>()?;
    let m = preds.len() as f64;
    let k = xstar.nrows();
    let mut model_only = DVector::zeros(k);
    let mut full = DVector::zeros(k);
    let mut var = DVector::zeros(k);
    for p in &preds {
        model_only += &p.model_only_mean;
        full += &p.full_mean;
        var += &p.variance;
    }
    model_only /= m;
    full /= m;
    var /= m;
    for p in &preds {
        let d = &p.full_mean - &full;
        var += d.component_mul(&d) / m;
    }
    Ok(PredictiveResult {
        model_only_mean: model_only,
        full_mean: full,
        variance: var,
    })
}
