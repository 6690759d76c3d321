use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use sgasp::baselines::{l2_calibrate, ls_calibrate, L2Options, LsOptions};
use sgasp::calib::{predict as plug_in, CalibParams, ComputerModel, Domain, FieldDataset, MeanBasis, PredictiveResult, PriorSpec};
use sgasp::emulator::{as_computer_model, emulator_fit, EmulatorOptions};
use sgasp::experiments::{builtin_model, mse};
use sgasp::inference::{mcmc_run, mle_fit, posterior_summary, predict_posterior, McmcOptions, MleOptions, PosteriorChain};
use sgasp::kernel::{KernelFamily, KernelSpec};
use sgasp::sgasp::{DiscrepancyMode, DiscrepancySpec};

use crate::config::{Basis, Family, Mode, ModelConfig, RunConfig};
use crate::{csvio, Failure};

struct Setup {
    cfg: RunConfig,
    data: FieldDataset,
    model: ComputerModel,
}

fn load(config: &Path) -> Result<Setup, Failure> {
    let cfg = RunConfig::load(config)?;
    let table = csvio::read(&cfg.data)?;
    let cols = table.rows.ncols();
    if cols < 2 || table.header.last().map(String::as_str) != Some("y") {
        return Err(Failure::data(format!("{} must have columns x1..xp,y", cfg.data.display())));
    }
    let p = cols - 1;
    let x = table.rows.columns(0, p).into_owned();
    let y = table.rows.column(p).into_owned();
    let domain = match &cfg.domain {
        Some(b) => Domain::new(b.clone()).map_err(|e| Failure::config(e.to_string()))?,
        None => Domain::new((0..p).map(|j| (x.column(j).min(), x.column(j).max())).collect())
            .map_err(|e| Failure::data(format!("cannot infer the input domain: {e}")))?,
    };
    let data = FieldDataset::new(x, y, domain).map_err(|e| Failure::data(e.to_string()))?;
    let model = match &cfg.model {
        ModelConfig::Builtin { name, theta_bounds } => {
            builtin_model(name, theta_bounds.clone()).map_err(|e| Failure::config(e.to_string()))?
        }
        ModelConfig::Emulator { design } => {
            let t = csvio::read(design)?;
            if t.rows.ncols() < p + 2 {
                return Err(Failure::data(format!("{} needs columns x1..xp,t1..tq,y", design.display())));
            }
            let z = t.rows.columns(0, t.rows.ncols() - 1).into_owned();
            let out = t.rows.column(t.rows.ncols() - 1).into_owned();
            let opts = EmulatorOptions {
                seed: cfg.mle.seed,
                ..Default::default()
            };
            let em = emulator_fit(&z, &out, p, &opts).map_err(Failure::fit)?;
            as_computer_model(&em).map_err(Failure::fit)?
        }
    };
    if matches!(cfg.mode, Mode::L2 | Mode::Ls) && model.p_theta() == 0 {
        return Err(Failure::config("two-step calibration needs a model with parameters"));
    }
    Ok(Setup { cfg, data, model })
}

fn spec(cfg: &RunConfig, p_x: usize) -> Result<DiscrepancySpec, Failure> {
    let family = match cfg.kernel {
        Family::Matern52 => KernelFamily::Matern52,
        Family::PowExp => KernelFamily::PowerExponential,
    };
    let mut kernel = KernelSpec::new(family, vec![1.0; p_x]).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(nu) = cfg.nu {
        kernel.roughness = vec![nu; p_x];
    }
    let mode = match cfg.mode {
        Mode::Gasp => DiscrepancyMode::Gasp,
        Mode::Sgasp => DiscrepancyMode::Sgasp,
        Mode::Ogasp => DiscrepancyMode::Ogasp,
        Mode::L2 | Mode::Ls => unreachable!("two-step modes have no discrepancy model"),
    };
    let basis = match cfg.mean_basis {
        Basis::Zero => MeanBasis::zero(),
        Basis::Intercept => MeanBasis::intercept(),
        Basis::Linear => MeanBasis::linear(p_x),
    };
    let mut s = DiscrepancySpec::new(mode, kernel).with_mean_basis(basis);
    if let Some(l) = cfg.lambda {
        s = s.with_lambda(l);
    }
    Ok(s)
}

fn mle_options(cfg: &RunConfig) -> MleOptions {
    MleOptions {
        n_starts: cfg.mle.n_starts,
        seed: cfg.mle.seed,
        ..Default::default()
    }
}

fn params_json(p: &CalibParams) -> Value {
    json!({
        "theta": p.theta,
        "beta_delta": p.beta_delta,
        "psi_delta": p.psi_delta,
        "sigma2_delta": p.sigma2_delta,
        "eta": p.eta,
        "sigma2_noise": p.sigma2_noise(),
    })
}

fn params_from_json(v: &Value) -> Option<CalibParams> {
    let vec = |k: &str| -> Option<Vec<f64>> { v.get(k)?.as_array()?.iter().map(Value::as_f64).collect() };
    Some(CalibParams {
        theta: vec("theta")?,
        beta_delta: vec("beta_delta")?,
        psi_delta: vec("psi_delta")?,
        sigma2_delta: v.get("sigma2_delta")?.as_f64()?,
        eta: v.get("eta")?.as_f64()?,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(cfg: &RunConfig) -> Result<&PathBuf, Failure> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    Ok(&cfg.output_dir)
}

pub fn calibrate(config: &Path) -> Result<(), Failure> {
    let Setup { cfg, data, model } = load(config)?;
    let dir = out_dir(&cfg)?;
    let start = Instant::now();
    let mut summary = Map::new();
    summary.insert("mode".into(), json!(format!("{:?}", cfg.mode).to_lowercase()));
    match cfg.mode {
        Mode::L2 => {
            let opts = L2Options {
                seed: cfg.mle.seed,
                mle: mle_options(&cfg),
                ..Default::default()
            };
            let r = l2_calibrate(&data, &model, &opts).map_err(Failure::fit)?;
            summary.insert("theta_hat".into(), json!(r.theta_hat));
            summary.insert("l2_loss".into(), json!(r.l2_loss_at_opt));
            summary.insert("seed".into(), json!(cfg.mle.seed));
        }
        Mode::Ls => {
            let opts = LsOptions {
                seed: cfg.mle.seed,
                mle: mle_options(&cfg),
                ..Default::default()
            };
            let r = ls_calibrate(&data, &model, &opts).map_err(Failure::fit)?;
            summary.insert("theta_hat".into(), json!(r.theta_hat));
            summary.insert("sse".into(), json!(r.sse));
            summary.insert("seed".into(), json!(cfg.mle.seed));
        }
        Mode::Gasp | Mode::Sgasp | Mode::Ogasp => {
            let spec = spec(&cfg, data.p_x())?;
            if cfg.estimation.mle() {
                let t = Instant::now();
                let r = mle_fit(&data, &model, &spec, &mle_options(&cfg)).map_err(Failure::fit)?;
                let starts: Vec<Value> = r
                    .per_start
                    .iter()
                    .map(|s| json!({"index": s.index, "converged": s.converged, "loglik": s.loglik.is_finite().then_some(s.loglik), "error": s.error}))
                    .collect();
                write_json(
                    &dir.join("mle.json"),
                    &json!({
                        "best_params": params_json(&r.best_params),
                        "best_loglik": r.best_loglik,
                        "best_start": r.best_start,
                        "per_start": starts,
                        "seed": cfg.mle.seed,
                        "seconds": t.elapsed().as_secs_f64(),
                    }),
                )?;
            }
            if cfg.estimation.mcmc() {
                let opts = McmcOptions {
                    samples: cfg.mcmc.samples,
                    burn_in: cfg.mcmc.burn_in,
                    seed: cfg.mcmc.seed,
                    mle: mle_options(&cfg),
                    ..Default::default()
                };
                let prior = PriorSpec::default_for(&data, &model);
                let t = Instant::now();
                let chain = mcmc_run(&data, &model, &spec, &prior, &opts).map_err(Failure::fit)?;
                let secs = t.elapsed().as_secs_f64();
                let keep = chain.retained(cfg.mcmc.thin);
                let rows = DMatrix::from_fn(keep.len(), chain.samples.ncols(), |i, j| chain.samples[(keep[i], j)]);
                csvio::write(&dir.join("posterior.csv"), &chain.column_names(), &rows)?;
                let s = posterior_summary(&chain).map_err(Failure::fit)?;
                let rates: Map<String, Value> = chain.acceptance_rates.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
                summary.insert("parameters".into(), json!(s.names));
                summary.insert("median".into(), json!(s.median));
                summary.insert("mean".into(), json!(s.mean));
                summary.insert("lower95".into(), json!(s.lower95));
                summary.insert("upper95".into(), json!(s.upper95));
                summary.insert("acceptance_rates".into(), Value::Object(rates));
                summary.insert("seed".into(), json!(cfg.mcmc.seed));
                summary.insert("samples".into(), json!(cfg.mcmc.samples));
                summary.insert("burn_in".into(), json!(cfg.mcmc.burn_in));
                summary.insert("thin".into(), json!(cfg.mcmc.thin));
                summary.insert("mcmc_seconds".into(), json!(secs));
            } else {
                summary.insert("seed".into(), json!(cfg.mle.seed));
            }
        }
    }
    summary.insert("seconds".into(), json!(start.elapsed().as_secs_f64()));
    write_json(&dir.join("summary.json"), &Value::Object(summary))
}

fn read_inputs(path: &Path, p: usize) -> Result<DMatrix<f64>, Failure> {
    let t = csvio::read(path)?;
    if t.header != csvio::coordinate_header(p, &[]) {
        return Err(Failure::data(format!("{} must have header {}", path.display(), csvio::coordinate_header(p, &[]).join(","))));
    }
    Ok(t.rows)
}

fn read_chain(path: &Path, p_theta: usize, q: usize, p_x: usize) -> Result<PosteriorChain, Failure> {
    let t = csvio::read(path)?;
    if t.rows.ncols() != p_theta + q + p_x + 2 || t.rows.nrows() == 0 {
        return Err(Failure::data(format!("{} does not match the configured model", path.display())));
    }
    let params: Vec<CalibParams> = (0..t.rows.nrows())
        .map(|i| {
            let r: Vec<f64> = t.rows.row(i).iter().copied().collect();
            CalibParams {
                theta: r[..p_theta].to_vec(),
                beta_delta: r[p_theta..p_theta + q].to_vec(),
                psi_delta: r[p_theta + q..p_theta + q + p_x].to_vec(),
                sigma2_delta: r[p_theta + q + p_x],
                eta: r[p_theta + q + p_x + 1],
            }
        })
        .collect();
    PosteriorChain::from_params(&params).map_err(|e| Failure::data(e.to_string()))
}

pub fn predict(config: &Path) -> Result<(), Failure> {
    let Setup { cfg, data, model } = load(config)?;
    let xpath = cfg.predict.clone().ok_or_else(|| Failure::config("predict needs a 'predict' input file"))?;
    let xs = read_inputs(&xpath, data.p_x())?;
    let dir = out_dir(&cfg)?;
    let pred: PredictiveResult = match cfg.mode {
        Mode::L2 => {
            let opts = L2Options {
                seed: cfg.mle.seed,
                mle: mle_options(&cfg),
                ..Default::default()
            };
            l2_calibrate(&data, &model, &opts).and_then(|r| r.predict(&model, &xs)).map_err(Failure::fit)?
        }
        Mode::Ls => {
            let opts = LsOptions {
                seed: cfg.mle.seed,
                mle: mle_options(&cfg),
                ..Default::default()
            };
            ls_calibrate(&data, &model, &opts).and_then(|r| r.predict(&model, &xs)).map_err(Failure::fit)?
        }
        Mode::Gasp | Mode::Sgasp | Mode::Ogasp => {
            let spec = spec(&cfg, data.p_x())?;
            let chain_path = dir.join("posterior.csv");
            let mle_path = dir.join("mle.json");
            if cfg.estimation.mcmc() && chain_path.exists() {
                let chain = read_chain(&chain_path, model.p_theta(), spec.mean_basis.len(), data.p_x())?;
                predict_posterior(&chain, &data, &model, &spec, &xs, 1).map_err(Failure::fit)?
            } else if cfg.estimation.mle() && mle_path.exists() {
                let text = std::fs::read_to_string(&mle_path).map_err(|e| Failure::data(e.to_string()))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", mle_path.display())))?;
                let p = v
                    .get("best_params")
                    .and_then(params_from_json)
                    .ok_or_else(|| Failure::data(format!("{} has no best_params", mle_path.display())))?;
                plug_in(&p, &data, &model, &spec, &xs).map_err(Failure::fit)?
            } else {
                return Err(Failure::config(format!("no calibration output in {}; run calibrate first", dir.display())));
            }
        }
    };
    let (lo, hi) = (pred.lower95(), pred.upper95());
    let p = data.p_x();
    let rows = DMatrix::from_fn(xs.nrows(), p + 5, |i, j| match j {
        j if j < p => xs[(i, j)],
        j => [pred.model_only_mean[i], pred.full_mean[i], pred.variance[i], lo[i], hi[i]][j - p],
    });
    let header = csvio::coordinate_header(p, &["model_only_mean", "full_mean", "variance", "lower95", "upper95"]);
    csvio::write(&dir.join("prediction.csv"), &header, &rows)?;

    if let Some(tpath) = &cfg.truth {
        let t = csvio::read(tpath)?;
        if t.header != csvio::coordinate_header(p, &["y_true"]) || t.rows.nrows() != xs.nrows() {
            return Err(Failure::data(format!("{} must match the prediction inputs with a y_true column", tpath.display())));
        }
        if (t.rows.columns(0, p) - &xs).amax() > 1e-12 {
            return Err(Failure::data("truth inputs differ from the prediction inputs"));
        }
        let y: DVector<f64> = t.rows.column(p).into_owned();
        let spath = dir.join("summary.json");
        let mut summary = match std::fs::read_to_string(&spath) {
            Ok(text) => match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                _ => return Err(Failure::data(format!("{} is not a JSON object", spath.display()))),
            },
            Err(_) => Map::new(),
        };
        summary.insert("mse_fm".into(), json!(mse(&pred.model_only_mean, &y)));
        let with_delta = (cfg.mode != Mode::L2).then(|| mse(&pred.full_mean, &y));
        summary.insert("mse_fm_delta".into(), json!(with_delta));
        write_json(&spath, &Value::Object(summary))?;
    }
    Ok(())
}
