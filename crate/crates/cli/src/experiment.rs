use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use sgasp::experiments::{
    branin_experiment, fig1, local_extrema, nonlinear_experiment, park_experiment, sine_experiment, SineSettings, EXPERIMENTS,
};

use crate::csvio::{coordinate_header, number, write, write_fields};
use crate::Failure;

fn opt(v: Option<f64>) -> String {
    v.map(number).unwrap_or_default()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn run(name: &str, seed: u64, outdir: &Path) -> Result<(), Failure> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Failure::config(format!("unknown experiment '{name}' (expected one of {})", EXPERIMENTS.join(", "))));
    }
    std::fs::create_dir_all(outdir).map_err(|e| Failure::data(format!("cannot create {}: {e}", outdir.display())))?;
    match name {
        "fig1" => {
            let cases = fig1(seed, 100).map_err(Failure::fit)?;
            let mut pairs = Vec::new();
            let mut avg = Vec::new();
            for c in &cases {
                for (r, (l0, l1)) in c.pairs.iter().enumerate() {
                    pairs.push(vec![c.label.clone(), r.to_string(), number(*l0), number(*l1)]);
                }
                avg.push(vec![c.label.clone(), opt(c.gamma), number(c.mean_diff), number(c.std_error)]);
            }
            write_fields(&outdir.join("fig1_pairs.csv"), &strings(&["case", "replication", "loglik_theta0", "loglik_theta1"]), &pairs)?;
            write_fields(&outdir.join("fig1_averages.csv"), &strings(&["case", "gamma", "mean_difference", "std_error"]), &avg)?;
        }
        "park" => {
            let rows = park_experiment(seed).map_err(Failure::fit)?;
            let fields: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut f = vec![
                        r.label.clone(),
                        r.mode.name().to_string(),
                        opt(r.fixed_sigma2),
                        number(r.mse_fm),
                        number(r.mse_fm_delta),
                        number(r.theta),
                        number(r.sigma2_delta),
                    ];
                    f.extend(r.gamma.iter().map(|g| number(*g)));
                    f.push(number(r.sigma2_noise));
                    f
                })
                .collect();
            let header = strings(&[
                "row", "method", "fixed_sigma2_delta", "mse_fm", "mse_fm_delta", "theta", "sigma2_delta", "gamma1", "gamma2", "gamma3",
                "gamma4", "sigma2_noise",
            ]);
            write_fields(&outdir.join("park_table.csv"), &header, &fields)?;
        }
        "sine" => {
            let rows = sine_experiment(seed, &SineSettings::default()).map_err(Failure::fit)?;
            let rate = |r: &sgasp::experiments::SineRow, b: &str| r.acceptance_rates.iter().find(|(k, _)| k == b).map(|(_, v)| *v);
            let fields: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        r.method.clone(),
                        number(r.theta),
                        number(r.mse_fm),
                        opt(r.mse_fm_delta),
                        opt(rate(r, "theta")),
                        opt(rate(r, "kernel")),
                        number(r.seconds),
                    ]
                })
                .collect();
            let header = strings(&["n", "method", "theta", "mse_fm", "mse_fm_delta", "accept_theta", "accept_kernel", "seconds"]);
            write_fields(&outdir.join("sine_table.csv"), &header, &fields)?;
        }
        "nonlinear" => {
            let r = nonlinear_experiment(seed, 601).map_err(Failure::fit)?;
            let curves = DMatrix::from_fn(r.theta.len(), 5, |i, j| {
                [r.theta[i], r.l2_loss[i], r.loglik_gasp[i], r.loglik_sgasp[i], r.loglik_ogasp[i]][j]
            });
            let header = strings(&["theta", "l2_loss", "loglik_gasp", "loglik_sgasp", "loglik_ogasp"]);
            write(&outdir.join("nonlinear_curves.csv"), &header, &curves)?;
            let mut ext = Vec::new();
            for (curve, ys) in [("l2_loss", &r.l2_loss), ("gasp", &r.loglik_gasp), ("sgasp", &r.loglik_sgasp), ("ogasp", &r.loglik_ogasp)] {
                for (at, is_max) in local_extrema(&r.theta, ys) {
                    ext.push(vec![curve.to_string(), number(at), if is_max { "max" } else { "min" }.to_string()]);
                }
            }
            write_fields(&outdir.join("nonlinear_extrema.csv"), &strings(&["curve", "theta", "kind"]), &ext)?;
        }
        _ => {
            let r = branin_experiment(seed).map_err(Failure::fit)?;
            let train = DMatrix::from_fn(r.train_x.nrows(), 3, |i, j| if j < 2 { r.train_x[(i, j)] } else { r.train_y[i] });
            write(&outdir.join("branin_train.csv"), &coordinate_header(2, &["y"]), &train)?;
            let test = DMatrix::from_fn(r.test_x.nrows(), 5, |i, j| match j {
                0 | 1 => r.test_x[(i, j)],
                2 => r.test_y[i],
                3 => r.gasp_mean[i],
                _ => r.sgasp_mean[i],
            });
            write(&outdir.join("branin_test.csv"), &coordinate_header(2, &["y_true", "gasp_mean", "sgasp_mean"]), &test)?;
            let s = json!({"seed": seed, "gamma": r.gamma, "mse_gasp": r.mse_gasp, "mse_sgasp": r.mse_sgasp});
            std::fs::write(outdir.join("branin_summary.json"), serde_json::to_string_pretty(&s).expect("serializable") + "\n")
                .map_err(|e| Failure::data(e.to_string()))?;
        }
    }
    Ok(())
}
