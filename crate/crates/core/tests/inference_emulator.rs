use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sgasp::baselines::maximin_lhd;
use sgasp::calib::{CalibParams, ComputerModel, Domain, PriorSpec};
use sgasp::emulator::{as_computer_model, emulator_fit, EmulatorOptions};
use sgasp::experiments::sine_data;
use sgasp::inference::{mcmc_run, mle_fit, posterior_summary, McmcOptions, MleOptions};
use sgasp::kernel::KernelSpec;
use sgasp::sgasp::DiscrepancySpec;

fn sine_model(lo: f64, hi: f64) -> ComputerModel {
    ComputerModel::new(|x, t| (t[0] * x[0]).sin(), Domain::new(vec![(lo, hi)]).unwrap())
}

#[test]
fn best_start_is_the_maximum_over_starts() {
    let data = sine_data(20, 5).unwrap();
    let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
    let opts = MleOptions {
        n_starts: 6,
        seed: 11,
        ..Default::default()
    };
    let res = mle_fit(&data, &sine_model(0.0, 40.0), &spec, &opts).unwrap();
    let max = res.per_start.iter().filter(|s| s.converged).map(|s| s.loglik).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.best_loglik, max);
    let first = res.per_start.iter().position(|s| s.converged && s.loglik == max).unwrap();
    assert_eq!(res.best_start, first);
    let again = mle_fit(&data, &sine_model(0.0, 40.0), &spec, &opts).unwrap();
    assert_eq!(res, again);
}

#[test]
fn stored_samples_respect_the_support() {
    let data = sine_data(15, 2).unwrap();
    let model = sine_model(0.0, 40.0);
    let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
    let prior = PriorSpec::default_for(&data, &model);
    let opts = McmcOptions {
        samples: 3000,
        burn_in: 1000,
        seed: 9,
        init: Some(CalibParams {
            theta: vec![31.0],
            beta_delta: vec![],
            psi_delta: vec![3.0],
            sigma2_delta: 0.5,
            eta: 0.2,
        }),
        ..Default::default()
    };
    let chain = mcmc_run(&data, &model, &spec, &prior, &opts).unwrap();
    assert_eq!(chain.len(), 3000);
    for i in 0..chain.len() {
        let p = chain.params_at(i);
        assert!((0.0..=40.0).contains(&p.theta[0]));
        assert!(p.psi_delta[0] > 0.0 && p.sigma2_delta > 0.0 && p.eta >= 0.0);
    }
    let s = posterior_summary(&chain).unwrap();
    for j in 0..s.names.len() {
        assert!(s.lower95[j] <= s.median[j] && s.median[j] <= s.upper95[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn emulator_interpolates_with_exact_dof(seed in 0u64..1000, d in 8usize..20) {
        let design = maximin_lhd(d, 2, 2000, seed).unwrap();
        let outputs = DVector::from_fn(d, |i, _| (4.0 * design[(i, 0)]).cos() * (1.0 + design[(i, 1)]));
        let opts = EmulatorOptions { n_starts: 4, seed, ..Default::default() };
        let em = emulator_fit(&design, &outputs, 1, &opts).unwrap();
        prop_assert_eq!(em.dof(), d - 1);
        let at = em.predict(&design).unwrap();
        prop_assert!((&at.mean - &outputs).amax() < 1e-6);
        prop_assert!(at.variance.iter().all(|v| v.abs() < 1e-8));
        let off = DMatrix::from_fn(10, 2, |i, j| ((i * 7 + j * 3) % 10) as f64 / 10.0 + 0.037);
        let p = em.predict(&off).unwrap();
        prop_assert!(p.variance.iter().all(|v| *v >= -1e-12));
    }
}

#[test]
fn emulated_sine_model_recovers_the_exact_estimate() {
    // Design over (x, theta) in [0,1] x [25,35].
    let mut design = maximin_lhd(50, 2, 20_000, 3).unwrap();
    for i in 0..50 {
        design[(i, 1)] = 25.0 + 10.0 * design[(i, 1)];
    }
    let outputs = DVector::from_fn(50, |i, _| (design[(i, 1)] * design[(i, 0)]).sin());
    let em = emulator_fit(&design, &outputs, 1, &EmulatorOptions { seed: 3, ..Default::default() }).unwrap();
    let emulated = as_computer_model(&em).unwrap();
    let bounds = emulated.theta_bounds().bounds(0);

    let data = sine_data(30, 1).unwrap();
    let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
    let opts = MleOptions {
        seed: 1,
        ..Default::default()
    };
    let exact = mle_fit(&data, &sine_model(bounds.0, bounds.1), &spec, &opts).unwrap();
    let approx = mle_fit(&data, &emulated, &spec, &opts).unwrap();
    let (a, b) = (exact.best_params.theta[0], approx.best_params.theta[0]);
    assert!((a - b).abs() <= 1.0, "exact {a}, emulated {b}");
}
