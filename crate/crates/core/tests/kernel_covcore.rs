use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sgasp::covcore::{gp_condition, mvn_logdensity, Factor, MvnModel};
use sgasp::kernel::{corr_matrix, corr_matrix_sym, matern52, pow_exp, product_corr, KernelSpec};

fn design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
}

proptest! {
    #[test]
    fn correlation_is_bounded_and_non_increasing(gamma in 0.01f64..5.0, nu in 0.2f64..2.0) {
        for spec in [KernelSpec::matern52(vec![gamma]).unwrap(), KernelSpec::pow_exp(vec![gamma], nu).unwrap()] {
            prop_assert_eq!(product_corr(&[0.3], &[0.3], &spec).unwrap(), 1.0);
            let mut prev = 1.0;
            for i in 1..=1000 {
                let c = product_corr(&[0.0], &[i as f64 * 0.004 * gamma], &spec).unwrap();
                prop_assert!(c > 0.0);
                prop_assert!(c <= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn product_form_multiplies_coordinates(a in prop::collection::vec(0.0f64..1.0, 3), b in prop::collection::vec(0.0f64..1.0, 3)) {
        let g = vec![0.4, 0.9, 1.7];
        let spec = KernelSpec::matern52(g.clone()).unwrap();
        let by_hand: f64 = (0..3).map(|l| matern52((a[l] - b[l]).abs(), g[l]).unwrap()).product();
        prop_assert!((product_corr(&a, &b, &spec).unwrap() - by_hand).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn correlation_matrix_is_symmetric_psd(n in 2usize..200, p in 1usize..4, seed in any::<u64>(), g in 0.05f64..2.0) {
        let x = design(n, p, seed);
        for spec in [KernelSpec::matern52(vec![g; p]).unwrap(), KernelSpec::pow_exp(vec![g; p], 1.9).unwrap()] {
            let r = corr_matrix_sym(&x, &spec).unwrap();
            for i in 0..n {
                prop_assert_eq!(r[(i, i)], 1.0);
                for j in 0..i {
                    prop_assert_eq!(r[(i, j)], r[(j, i)]);
                }
            }
            prop_assert!(r.clone().symmetric_eigen().eigenvalues.min() >= -1e-8 * n as f64);
            let cross = corr_matrix(&x, &x, &spec).unwrap();
            prop_assert!((cross - &r).amax() < 1e-15);
        }
    }

    #[test]
    fn conditional_variance_stays_within_prior(n in 2usize..30, k in 1usize..10, seed in any::<u64>(), nugget in 0.0f64..0.5) {
        let x = design(n + k, 1, seed);
        let spec = KernelSpec::matern52(vec![0.3]).unwrap();
        let train = x.rows(0, n).into_owned();
        let test = x.rows(n, k).into_owned();
        let r = corr_matrix_sym(&train, &spec).unwrap();
        let rs = corr_matrix(&train, &test, &spec).unwrap();
        let cs = corr_matrix_sym(&test, &spec).unwrap();
        let y = DVector::from_fn(n, |i, _| (7.0 * train[(i, 0)]).sin());
        let c = gp_condition(&r, &rs, &cs, &y, nugget + 1e-6).unwrap();
        for i in 0..k {
            prop_assert!(c.cov[(i, i)] >= -1e-10);
            prop_assert!(c.cov[(i, i)] <= cs[(i, i)] + 1e-10);
        }
    }

    #[test]
    fn log_density_is_permutation_invariant(n in 1usize..12, seed in any::<u64>(), shift in 0usize..12) {
        let a = design(n, n, seed);
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.3;
        let mean = DVector::from_fn(n, |i, _| i as f64 * 0.1);
        let y = DVector::from_fn(n, |i, _| (i as f64).cos());
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pc = DMatrix::from_fn(n, n, |i, j| cov[(perm[i], perm[j])]);
        let pm = DVector::from_fn(n, |i, _| mean[perm[i]]);
        let py = DVector::from_fn(n, |i, _| y[perm[i]]);
        let a = mvn_logdensity(&y, &MvnModel::new(mean, cov).unwrap()).unwrap();
        let b = mvn_logdensity(&py, &MvnModel::new(pm, pc).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn kernel_families_share_limits() {
    assert_eq!(matern52(0.0, 0.7).unwrap(), pow_exp(0.0, 0.7, 2.0).unwrap());
    assert!(matern52(60.0, 1.0).unwrap() < 1e-30);
    assert!(pow_exp(60.0, 1.0, 2.0).unwrap() < 1e-30);
}

#[test]
fn vanishing_nugget_converges_monotonically() {
    let train = DMatrix::from_column_slice(6, 1, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let test = DMatrix::from_column_slice(2, 1, &[0.1, 0.73]);
    let spec = KernelSpec::matern52(vec![0.2]).unwrap();
    let r = corr_matrix_sym(&train, &spec).unwrap();
    let rs = corr_matrix(&train, &test, &spec).unwrap();
    let cs = corr_matrix_sym(&test, &spec).unwrap();
    let y = DVector::from_fn(6, |i, _| train[(i, 0)] * train[(i, 0)]);
    let exact = gp_condition(&r, &rs, &cs, &y, 0.0).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [1e-2, 1e-4, 1e-6] {
        let c = gp_condition(&r, &rs, &cs, &y, eps).unwrap();
        let diff = (&c.mean - &exact.mean).amax().max((&c.cov - &exact.cov).amax());
        assert!(diff < prev, "eps {eps}: {diff} vs {prev}");
        prev = diff;
    }
    assert!(prev < 1e-4);
}

#[test]
fn factor_escalates_jitter_on_singular_input() {
    let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.1, 0.5]);
    let r = corr_matrix_sym(&x, &KernelSpec::matern52(vec![0.5]).unwrap()).unwrap();
    let f = Factor::new(&r).unwrap();
    assert!(f.jitter() > 0.0);
    let ok = Factor::new(&DMatrix::identity(3, 3)).unwrap();
    assert_eq!(ok.jitter(), 0.0);
    assert!(ok.log_det().abs() < 1e-15);
}
