//! Built-in test functions and the numerical studies that compare GaSP,
//! S-GaSP, O-GaSP and the two-step baselines.
//!
//! Every study is a deterministic function of its seed. Independent random
//! streams (design, noise, held-out points, replications) are derived from the
//! seed with [`stream_rng`].

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{l2_calibrate, ls_calibrate, maximin_lhd, L2Options, LsOptions};
use crate::calib::{
    likelihood_core_gls, marginal_loglik, predict, CalibParams, ComputerModel, Domain, FieldDataset, MeanBasis,
    PriorSpec,
};
use crate::emulator::{emulator_fit, EmulatorOptions};
use crate::error::{Error, Result};
use crate::inference::{mcmc_run, mle_fit, posterior_summary, predict_posterior, McmcOptions, MleOptions};
use crate::kernel::KernelSpec;
use crate::sgasp::{DiscrepancyMode, DiscrepancySpec};

/// `(2/3) exp(x1 + x2) - x4 sin(x3) + x3` on `[0,1]^4`.
pub fn park(x: &[f64]) -> f64 {
    2.0 / 3.0 * (x[0] + x[1]).exp() - x[3] * x[2].sin() + x[2]
}

/// Integral of [`park`] over the unit cube.
pub fn park_mean() -> f64 {
    let e1 = std::f64::consts::E - 1.0;
    2.0 / 3.0 * e1 * e1 - 0.5 * (1.0 - 1f64.cos()) + 0.5
}

/// Branin function with `u` in `[0,1]^2` mapped to `x1 = 15 u1 - 5`, `x2 = 15 u2`.
pub fn branin(u: &[f64]) -> f64 {
    let x1 = 15.0 * u[0] - 5.0;
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// `sin(10 pi x) + sin(pi x)`.
pub fn sine_reality(x: &[f64]) -> f64 {
    (10.0 * PI * x[0]).sin() + (PI * x[0]).sin()
}

/// `x cos(3x/2) + x`.
pub fn nonlinear_reality(x: &[f64]) -> f64 {
    x[0] * (1.5 * x[0]).cos() + x[0]
}

pub const BUILTIN_MODELS: [&str; 5] = ["constant", "sine_theta_x", "sine_plus_x", "branin", "park"];

/// Parameter box used when a built-in model is requested without one.
pub fn default_theta_bounds(name: &str) -> Option<Vec<(f64, f64)>> {
    match name {
        "constant" => Some(vec![(-50.0, 50.0)]),
        "sine_theta_x" => Some(vec![(0.0, 40.0)]),
        "sine_plus_x" => Some(vec![(0.0, 3.0)]),
        "branin" | "park" => Some(Vec::new()),
        _ => None,
    }
}

/// Look up a built-in computer model. `branin` and `park` take no parameters.
pub fn builtin_model(name: &str, theta_bounds: Option<Vec<(f64, f64)>>) -> Result<ComputerModel> {
    let default = default_theta_bounds(name).ok_or_else(|| {
        Error::Argument(format!("unknown model '{name}' (expected one of {})", BUILTIN_MODELS.join(", ")))
    })?;
    let bounds = Domain::new(theta_bounds.unwrap_or(default))?;
    let expected = match name {
        "branin" | "park" => 0,
        _ => 1,
    };
    if bounds.dim() != expected {
        return Err(Error::Argument(format!("model '{name}' takes {expected} parameter(s)")));
    }
    Ok(match name {
        "constant" => ComputerModel::new(|_, t| t[0], bounds),
        "sine_theta_x" => ComputerModel::new(|x, t| (t[0] * x[0]).sin(), bounds),
        "sine_plus_x" => ComputerModel::new(|x, t| (t[0] * x[0]).sin() + x[0], bounds),
        "branin" => ComputerModel::new(|x, _| branin(x), bounds),
        _ => ComputerModel::new(|x, _| park(x), bounds),
    })
}

/// Named experiments.
pub const EXPERIMENTS: [&str; 5] = ["fig1", "park", "sine", "nonlinear", "branin"];

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` uniform points in the box.
pub fn uniform_points(domain: &Domain, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = domain.dim();
    let mut out = DMatrix::zeros(k, p);
    for i in 0..k {
        for l in 0..p {
            let (a, b) = domain.bounds(l);
            out[(i, l)] = a + (b - a) * rng.random::<f64>();
        }
    }
    out
}

fn eval_rows(f: fn(&[f64]) -> f64, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        f(&row)
    })
}

fn add_noise(y: &mut DVector<f64>, sd: f64, rng: &mut ChaCha8Rng) {
    for v in y.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
}

/// Mean squared difference.
pub fn mse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

fn equispaced(n: usize, a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| a + (b - a) * i as f64 / (n - 1) as f64)
}

// ---------------------------------------------------------------------------
// Likelihood flatness in theta for f^M = theta.

#[derive(Debug, Clone)]
pub struct Fig1Case {
    pub label: String,
    /// Range of the power-exponential kernel; `None` is the independent case.
    pub gamma: Option<f64>,
    /// `(l(0), l(1))` per replication.
    pub pairs: Vec<(f64, f64)>,
    pub mean_diff: f64,
    pub std_error: f64,
}

/// `y ~ N(0, R)` at 200 equispaced points, `f^M = theta`, unit variance and
/// no noise; records the log-likelihood at `theta = 0` and `theta = 1`.
pub fn fig1(seed: u64, replications: usize) -> Result<Vec<Fig1Case>> {
    let n = 200;
    let x = equispaced(n, 0.0, 1.0);
    let cases: [(&str, Option<f64>); 4] = [("gamma=1", Some(1.0)), ("gamma=0.1", Some(0.1)), ("gamma=0.01", Some(0.01)), ("independent", None)];
    let model = ComputerModel::new(|_, t| t[0], Domain::new(vec![(-1.0, 2.0)])?);
    let mut out = Vec::new();
    for (label, gamma) in cases {
        // A range far below the grid spacing makes R the identity exactly.
        let g = gamma.unwrap_or(1e-6);
        let kernel = KernelSpec::pow_exp(vec![g], 1.9)?;
        let spec = DiscrepancySpec::gasp(kernel.clone());
        let r = crate::kernel::corr_matrix_sym(&x, &kernel)?;
        let factor = crate::covcore::Factor::new(&r)?;
        let l = factor.l();
        let pairs: Vec<(f64, f64)> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(seed.wrapping_add(rep as u64), 1);
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &l * z;
                let data = FieldDataset::new(x.clone(), y, Domain::unit(1))?;
                let at = |t: f64| {
                    let p = CalibParams {
                        theta: vec![t],
                        beta_delta: vec![],
                        psi_delta: vec![1.0 / g],
                        sigma2_delta: 1.0,
                        eta: 0.0,
                    };
                    marginal_loglik(&p, &data, &model, &spec)
                };
                Ok((at(0.0)?, at(1.0)?))
            })
            .collect::<Result<_>>()?;
        let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (diffs.len() as f64 - 1.0);
        out.push(Fig1Case {
            label: label.to_string(),
            gamma,
            pairs,
            mean_diff: m,
            std_error: (var / diffs.len() as f64).sqrt(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Park function, f^M = theta, maximum likelihood.

#[derive(Debug, Clone)]
pub struct ParkRow {
    pub label: String,
    pub mode: DiscrepancyMode,
    pub fixed_sigma2: Option<f64>,
    pub mse_fm: f64,
    pub mse_fm_delta: f64,
    pub theta: f64,
    pub sigma2_delta: f64,
    pub gamma: Vec<f64>,
    pub sigma2_noise: f64,
}

#[derive(Debug, Clone)]
pub struct ParkSetup {
    pub data: FieldDataset,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
}

pub fn park_setup(seed: u64) -> Result<ParkSetup> {
    let x = maximin_lhd(50, 4, 20_000, seed)?;
    let mut y = eval_rows(park, &x);
    add_noise(&mut y, 0.01, &mut stream_rng(seed, 2));
    let data = FieldDataset::new(x, y, Domain::unit(4))?;
    let test_x = uniform_points(&Domain::unit(4), 1000, &mut stream_rng(seed, 3));
    let test_y = eval_rows(park, &test_x);
    Ok(ParkSetup { data, test_x, test_y })
}

pub fn park_experiment(seed: u64) -> Result<Vec<ParkRow>> {
    let setup = park_setup(seed)?;
    let model = builtin_model("constant", None)?;
    let mut rows = Vec::new();
    for fixed in [None, Some(1.0), Some(10.0), Some(100.0), Some(1000.0)] {
        for mode in [DiscrepancyMode::Gasp, DiscrepancyMode::Sgasp] {
            let spec = DiscrepancySpec::new(mode, KernelSpec::matern52(vec![1.0; 4])?);
            let opts = MleOptions {
                seed,
                fixed_sigma2: fixed,
                ..Default::default()
            };
            let fit = mle_fit(&setup.data, &model, &spec, &opts)?;
            let p = fit.best_params;
            let pred = predict(&p, &setup.data, &model, &spec, &setup.test_x)?;
            let name = if mode == DiscrepancyMode::Gasp { "GaSP" } else { "S-GaSP" };
            let label = match fixed {
                None => name.to_string(),
                Some(s) => format!("{name}, sigma2_delta={s}"),
            };
            rows.push(ParkRow {
                label,
                mode,
                fixed_sigma2: fixed,
                mse_fm: mse(&pred.model_only_mean, &setup.test_y),
                mse_fm_delta: mse(&pred.full_mean, &setup.test_y),
                theta: p.theta[0],
                sigma2_delta: p.sigma2_delta,
                gamma: p.range(),
                sigma2_noise: p.sigma2_noise(),
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sine example: reality sin(10 pi x) + sin(pi x), model sin(theta x).

#[derive(Debug, Clone, PartialEq)]
pub struct SineRow {
    pub n: usize,
    pub method: String,
    pub theta: f64,
    pub mse_fm: f64,
    /// Not reported for the L2 approach, which has no discrepancy model.
    pub mse_fm_delta: Option<f64>,
    pub acceptance_rates: Vec<(String, f64)>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SineSettings {
    pub sizes: Vec<usize>,
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for SineSettings {
    fn default() -> Self {
        SineSettings {
            sizes: vec![10, 20, 30],
            samples: 50_000,
            burn_in: 10_000,
            thin: 25,
        }
    }
}

pub fn sine_data(n: usize, seed: u64) -> Result<FieldDataset> {
    let x = equispaced(n, 0.0, 1.0);
    let mut y = eval_rows(sine_reality, &x);
    add_noise(&mut y, 0.3, &mut stream_rng(seed.wrapping_add(n as u64), 4));
    FieldDataset::new(x, y, Domain::unit(1))
}

pub fn sine_test_points(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let x = uniform_points(&Domain::unit(1), 1000, &mut stream_rng(seed, 5));
    let y = eval_rows(sine_reality, &x);
    (x, y)
}

/// One row per (sample size, method); methods are GaSP and S-GaSP (posterior
/// medians), LS+GaSP and GaSP+L2.
pub fn sine_experiment(seed: u64, settings: &SineSettings) -> Result<Vec<SineRow>> {
    let model = builtin_model("sine_theta_x", None)?;
    let (tx, ty) = sine_test_points(seed);
    let mut rows = Vec::new();
    for &n in &settings.sizes {
        let data = sine_data(n, seed)?;
        for mode in [DiscrepancyMode::Gasp, DiscrepancyMode::Sgasp] {
            let start = Instant::now();
            let spec = DiscrepancySpec::new(mode, KernelSpec::matern52(vec![1.0])?);
            let prior = PriorSpec::default_for(&data, &model);
            let opts = McmcOptions {
                samples: settings.samples,
                burn_in: settings.burn_in,
                seed,
                ..Default::default()
            };
            let chain = mcmc_run(&data, &model, &spec, &prior, &opts)?;
            let summary = posterior_summary(&chain)?;
            let pred = predict_posterior(&chain, &data, &model, &spec, &tx, settings.thin)?;
            rows.push(SineRow {
                n,
                method: if mode == DiscrepancyMode::Gasp { "GaSP" } else { "S-GaSP" }.into(),
                theta: summary.median[0],
                mse_fm: mse(&pred.model_only_mean, &ty),
                mse_fm_delta: Some(mse(&pred.full_mean, &ty)),
                acceptance_rates: chain.acceptance_rates.clone(),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        let start = Instant::now();
        let ls = ls_calibrate(
            &data,
            &model,
            &LsOptions {
                seed,
                ..Default::default()
            },
        )?;
        let pred = ls.predict(&model, &tx)?;
        rows.push(SineRow {
            n,
            method: "LS+GaSP".into(),
            theta: ls.theta_hat[0],
            mse_fm: mse(&pred.model_only_mean, &ty),
            mse_fm_delta: Some(mse(&pred.full_mean, &ty)),
            acceptance_rates: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
        });
        let start = Instant::now();
        let l2 = l2_calibrate(
            &data,
            &model,
            &L2Options {
                seed,
                ..Default::default()
            },
        )?;
        let f = model.eval_rows(&tx, &l2.theta_hat)?;
        rows.push(SineRow {
            n,
            method: "GaSP+L2".into(),
            theta: l2.theta_hat[0],
            mse_fm: mse(&f, &ty),
            mse_fm_delta: None,
            acceptance_rates: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Nonlinear example: reality x cos(3x/2) + x, model sin(theta x) + x.

#[derive(Debug, Clone)]
pub struct NonlinearResult {
    pub theta: Vec<f64>,
    pub l2_loss: Vec<f64>,
    pub loglik_gasp: Vec<f64>,
    pub loglik_sgasp: Vec<f64>,
    pub loglik_ogasp: Vec<f64>,
}

/// Interior grid points where a curve has a local extremum, refined by a
/// parabola through the neighbours. Returns `(location, is_maximum)`.
pub fn local_extrema(x: &[f64], y: &[f64]) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if is_max || is_min {
            let h = x[i + 1] - x[i];
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * h * (a - c) / denom } else { 0.0 };
            out.push((x[i] + shift, is_max));
        }
    }
    out
}

pub fn nonlinear_data(seed: u64) -> Result<FieldDataset> {
    let x = equispaced(15, 0.0, 5.0);
    let mut y = eval_rows(nonlinear_reality, &x);
    add_noise(&mut y, 0.2, &mut stream_rng(seed, 6));
    FieldDataset::new(x, y, Domain::new(vec![(0.0, 5.0)])?)
}

/// L2 loss of the model against reality and the three log-likelihoods, on a
/// grid of `grid` values of theta over `[0, 3]`. The discrepancy uses a
/// Matern kernel with `gamma = 1/2`, `sigma2_delta = 1` and `eta = 0.01`.
pub fn nonlinear_experiment(seed: u64, grid: usize) -> Result<NonlinearResult> {
    let data = nonlinear_data(seed)?;
    let model = builtin_model("sine_plus_x", None)?;
    let theta: Vec<f64> = (0..grid).map(|i| 3.0 * i as f64 / (grid - 1) as f64).collect();
    let (nodes, w) = crate::sgasp::midpoint_grid(data.domain(), 1000)?;
    let reality = eval_rows(nonlinear_reality, &nodes);
    let l2_loss = theta
        .iter()
        .map(|t| crate::baselines::l2_loss(&model, &[*t], &nodes, w, &reality))
        .collect::<Result<Vec<f64>>>()?;
    let kernel = KernelSpec::matern52(vec![0.5])?;
    let curve = |mode: DiscrepancyMode| -> Result<Vec<f64>> {
        let spec = DiscrepancySpec::new(mode, kernel.clone());
        theta
            .par_iter()
            .map(|t| {
                let p = CalibParams {
                    theta: vec![*t],
                    beta_delta: vec![],
                    psi_delta: vec![2.0],
                    sigma2_delta: 1.0,
                    eta: 0.01,
                };
                marginal_loglik(&p, &data, &model, &spec)
            })
            .collect()
    };
    Ok(NonlinearResult {
        l2_loss,
        loglik_gasp: curve(DiscrepancyMode::Gasp)?,
        loglik_sgasp: curve(DiscrepancyMode::Sgasp)?,
        loglik_ogasp: curve(DiscrepancyMode::Ogasp)?,
        theta,
    })
}

// ---------------------------------------------------------------------------
// Branin function: GaSP emulator versus S-GaSP with the same ranges.

#[derive(Debug, Clone)]
pub struct BraninResult {
    pub train_x: DMatrix<f64>,
    pub train_y: DVector<f64>,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
    pub gamma: Vec<f64>,
    pub gasp_mean: DVector<f64>,
    pub sgasp_mean: DVector<f64>,
    pub mse_gasp: f64,
    pub mse_sgasp: f64,
}

pub fn branin_experiment(seed: u64) -> Result<BraninResult> {
    let train_x = maximin_lhd(30, 2, 20_000, seed)?;
    let train_y = eval_rows(branin, &train_x);
    let test_x = uniform_points(&Domain::unit(2), 1000, &mut stream_rng(seed, 7));
    let test_y = eval_rows(branin, &test_x);

    let em = emulator_fit(
        &train_x,
        &train_y,
        2,
        &EmulatorOptions {
            seed,
            ..Default::default()
        },
    )?;
    let gasp_mean = em.predict(&test_x)?.mean;
    let gamma = em.kernel().range.clone();

    let data = FieldDataset::new(train_x.clone(), train_y.clone(), Domain::unit(2))?;
    let zero = ComputerModel::zero();
    let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(gamma.clone())?).with_mean_basis(MeanBasis::intercept());
    let psi: Vec<f64> = gamma.iter().map(|g| 1.0 / g).collect();
    let (core, beta) = likelihood_core_gls(&[], &psi, 0.0, &data, &zero, &spec)?;
    let params = CalibParams {
        theta: vec![],
        beta_delta: beta,
        psi_delta: psi,
        sigma2_delta: core.sigma2_hat().max(f64::MIN_POSITIVE),
        eta: 0.0,
    };
    let sgasp_mean = predict(&params, &data, &zero, &spec, &test_x)?.full_mean;
    Ok(BraninResult {
        mse_gasp: mse(&gasp_mean, &test_y),
        mse_sgasp: mse(&sgasp_mean, &test_y),
        train_x,
        train_y,
        test_x,
        test_y,
        gamma,
        gasp_mean,
        sgasp_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn park_mean_matches_quadrature() {
        let k = 40;
        let mut s = 0.0;
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    for d in 0..k {
                        let x = [a, b, c, d].map(|i| (i as f64 + 0.5) / k as f64);
                        s += park(&x);
                    }
                }
            }
        }
        let q = s / (k as f64).powi(4);
        assert!((q - park_mean()).abs() < 1e-3);
        assert!((park_mean() - 2.2385).abs() < 1e-4);
    }

    #[test]
    fn branin_minimum() {
        // one of the three global minimizers, (pi, 2.275), mapped to the unit square
        let u = [(PI + 5.0) / 15.0, 2.275 / 15.0];
        assert!((branin(&u) - 0.397887).abs() < 1e-5);
    }

    #[test]
    fn registry() {
        for name in BUILTIN_MODELS {
            assert!(builtin_model(name, None).is_ok());
        }
        assert!(builtin_model("nope", None).is_err());
        let m = builtin_model("sine_plus_x", None).unwrap();
        assert!((m.eval(&[2.0], &[1.0]).unwrap() - (2f64.sin() + 2.0)).abs() < 1e-15);
        assert!(builtin_model("constant", Some(vec![(0.0, 1.0), (0.0, 1.0)])).is_err());
    }

    #[test]
    fn extrema_of_cosine() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let e = local_extrema(&x, &y);
        assert_eq!(e.len(), 3);
        assert!((e[0].0 - PI).abs() < 1e-3 && !e[0].1);
        assert!((e[1].0 - 2.0 * PI).abs() < 1e-3 && e[1].1);
    }
}
