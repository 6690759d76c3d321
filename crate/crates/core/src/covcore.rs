//! Dense multivariate-normal machinery built on a jittered Cholesky factor.
//!
//! Nothing in here forms an explicit inverse; every solve goes through the
//! triangular factor.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal jitter levels tried in order, relative to the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factor of `A + jitter * I`, remembering the jitter that was needed.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factor a symmetric matrix, escalating diagonal jitter on failure.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!("cannot factor a {}x{} matrix", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Shape("cannot factor an empty matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("matrix has non-finite entries"));
        }
        let mean_diag = a.diagonal().mean().abs().max(f64::MIN_POSITIVE);
        let mut last = 0.0;
        for rel in JITTER_LADDER {
            let jitter = rel * mean_diag;
            last = jitter;
            let mut m = a.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                    return Ok(Factor { chol, jitter });
                }
            }
        }
        Err(Error::Numerical {
            message: format!("Cholesky factorization of a {n}x{n} matrix failed"),
            jitter: last,
        })
    }

    /// Jitter added to the diagonal before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `L L^T = A + jitter I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log |A + jitter I|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L^{-1} b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("factor diagonal is positive")
    }

    /// `L^{-1} B` for a matrix right-hand side.
    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("factor diagonal is positive")
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.whiten(b).norm_squared()
    }
}

/// Gaussian with a dense covariance.
#[derive(Debug, Clone)]
pub struct MvnModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl MvnModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() != mean.len() {
            return Err(Error::Shape(format!(
                "mean of length {} with a {}x{} covariance",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(MvnModel { mean, covariance })
    }

    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        mvn_logdensity(y, self)
    }
}

/// Log-density of `y` under the model, via Cholesky.
pub fn mvn_logdensity(y: &DVector<f64>, model: &MvnModel) -> Result<f64> {
    if y.len() != model.mean.len() || model.covariance.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "observation of length {} for a {}-dimensional model",
            y.len(),
            model.mean.len()
        )));
    }
    let factor = Factor::new(&model.covariance)?;
    let resid = y - &model.mean;
    Ok(logdensity_with_factor(&resid, &factor))
}

/// Log-density of a centered residual given the factor of its covariance.
pub(crate) fn logdensity_with_factor(resid: &DVector<f64>, factor: &Factor) -> f64 {
    let n = resid.len() as f64;
    -0.5 * (n * (2.0 * PI).ln() + factor.log_det() + factor.quad_form(resid))
}

/// Conditional (predictive) mean and covariance of a zero-mean GaSP.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Condition a zero-mean Gaussian process on (possibly noisy) observations.
///
/// `r` is the n×n training correlation, `r_star` the n×k cross-correlation and
/// `c_star_prior` the k×k prior correlation of the new points.
pub fn gp_condition(
    r: &DMatrix<f64>,
    r_star: &DMatrix<f64>,
    c_star_prior: &DMatrix<f64>,
    y_centered: &DVector<f64>,
    nugget: f64,
) -> Result<Conditioned> {
    let n = r.nrows();
    if !r.is_square() || r_star.nrows() != n || y_centered.len() != n {
        return Err(Error::Shape("training blocks have inconsistent sizes".into()));
    }
    let k = r_star.ncols();
    if c_star_prior.shape() != (k, k) {
        return Err(Error::Shape(format!(
            "prior block is {}x{}, expected {k}x{k}",
            c_star_prior.nrows(),
            c_star_prior.ncols()
        )));
    }
    if !(nugget >= 0.0 && nugget.is_finite()) {
        return Err(Error::Domain(format!("nugget must be nonnegative, got {nugget}")));
    }
    let mut a = r.clone();
    for i in 0..n {
        a[(i, i)] += nugget;
    }
    let factor = Factor::new(&a)?;
    let w = factor.whiten_mat(r_star);
    let z = factor.whiten(y_centered);
    let mean = w.tr_mul(&z);
    let mut cov = c_star_prior - w.tr_mul(&w);
    symmetrize(&mut cov);
    Ok(Conditioned { mean, cov })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{corr_matrix, corr_matrix_sym, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    // Brute-force density using an explicit inverse and determinant.
    fn dense_logdensity(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let inv = cov.clone().try_inverse().unwrap();
        let r = y - mean;
        let n = y.len() as f64;
        -0.5 * (n * (2.0 * PI).ln() + cov.determinant().ln() + (r.transpose() * inv * &r)[(0, 0)])
    }

    #[test]
    fn scalar_standard_normal() {
        let m = MvnModel::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let v = mvn_logdensity(&DVector::zeros(1), &m).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn independent_factorizes() {
        let y = DVector::from_vec(vec![0.3, -1.2]);
        let m = MvnModel::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let uni = |v: f64| -0.5 * (2.0 * PI).ln() - 0.5 * v * v;
        assert!((mvn_logdensity(&y, &m).unwrap() - uni(0.3) - uni(-1.2)).abs() < 1e-14);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cov = random_spd(3, &mut rng);
            let mean = DVector::from_fn(3, |_, _| rng.random::<f64>());
            let y = DVector::from_fn(3, |_, _| rng.random::<f64>() * 2.0);
            let m = MvnModel::new(mean.clone(), cov.clone()).unwrap();
            let got = mvn_logdensity(&y, &m).unwrap();
            assert!((got - dense_logdensity(&y, &mean, &cov)).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let cov = random_spd(n, &mut rng);
        let mean = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let perm = [3, 0, 5, 1, 4, 2];
        let pm = DVector::from_fn(n, |i, _| mean[perm[i]]);
        let py = DVector::from_fn(n, |i, _| y[perm[i]]);
        let pc = DMatrix::from_fn(n, n, |i, j| cov[(perm[i], perm[j])]);
        let a = mvn_logdensity(&y, &MvnModel::new(mean, cov).unwrap()).unwrap();
        let b = mvn_logdensity(&py, &MvnModel::new(pm, pc).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn jitter_escalation_is_recorded() {
        // Rank-one matrix: exact factorization fails, jitter rescues it.
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let a = &v * v.transpose();
        let f = Factor::new(&a).unwrap();
        assert!(f.jitter() > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match Factor::new(&bad) {
            Err(Error::Numerical { jitter, .. }) => assert!(jitter > 0.0),
            other => panic!("expected numerical error, got {other:?}"),
        }
        assert_eq!(Factor::new(&DMatrix::identity(3, 3)).unwrap().jitter(), 0.0);
    }

    #[test]
    fn shape_errors() {
        let m = MvnModel::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(mvn_logdensity(&DVector::zeros(3), &m), Err(Error::Shape(_))));
        assert!(MvnModel::new(DVector::zeros(2), DMatrix::identity(3, 3)).is_err());
    }

    fn design() -> (DMatrix<f64>, DMatrix<f64>, KernelSpec) {
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.45, 0.8]);
        let xs = DMatrix::from_row_slice(1, 1, &[0.6]);
        (x, xs, KernelSpec::matern52(vec![0.3]).unwrap())
    }

    #[test]
    fn interpolates_training_point() {
        let (x, _, spec) = design();
        let r = corr_matrix_sym(&x, &spec).unwrap();
        let xs = DMatrix::from_row_slice(1, 1, &[0.45]);
        let rs = corr_matrix(&x, &xs, &spec).unwrap();
        let y = DVector::from_vec(vec![0.2, -0.7, 1.1]);
        let c = gp_condition(&r, &rs, &DMatrix::identity(1, 1), &y, 0.0).unwrap();
        assert!((c.mean[0] + 0.7).abs() < 1e-10);
        assert!(c.cov[(0, 0)] <= 1e-8);
    }

    #[test]
    fn uncorrelated_point_reverts_to_prior() {
        let (x, _, spec) = design();
        let r = corr_matrix_sym(&x, &spec).unwrap();
        let prior = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let y = DVector::from_vec(vec![0.2, -0.7, 1.1]);
        let c = gp_condition(&r, &DMatrix::zeros(3, 2), &prior, &y, 0.0).unwrap();
        assert!(c.mean.amax() == 0.0);
        assert!((c.cov - prior).amax() < 1e-15);
    }

    #[test]
    fn matches_joint_gaussian_conditioning() {
        // Condition the 4x4 joint correlation by explicit block inversion.
        let (x, xs, spec) = design();
        let all = DMatrix::from_row_slice(4, 1, &[0.1, 0.45, 0.8, 0.6]);
        let joint = corr_matrix_sym(&all, &spec).unwrap();
        let y = DVector::from_vec(vec![0.2, -0.7, 1.1]);
        let a = joint.view((0, 0), (3, 3)).into_owned();
        let b = joint.view((0, 3), (3, 1)).into_owned();
        let inv = a.clone().try_inverse().unwrap();
        let mean = (b.transpose() * &inv * &y)[(0, 0)];
        let var = joint[(3, 3)] - (b.transpose() * &inv * &b)[(0, 0)];

        let r = corr_matrix_sym(&x, &spec).unwrap();
        let rs = corr_matrix(&x, &xs, &spec).unwrap();
        let c = gp_condition(&r, &rs, &DMatrix::identity(1, 1), &y, 0.0).unwrap();
        assert!((c.mean[0] - mean).abs() < 1e-10);
        assert!((c.cov[(0, 0)] - var).abs() < 1e-10);
    }

    #[test]
    fn variance_bounded_by_prior_and_nugget_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.random::<f64>());
        let xs = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let spec = KernelSpec::matern52(vec![0.3, 0.4]).unwrap();
        let r = corr_matrix_sym(&x, &spec).unwrap();
        let rs = corr_matrix(&x, &xs, &spec).unwrap();
        let prior = corr_matrix_sym(&xs, &spec).unwrap();
        let y = DVector::from_fn(12, |_, _| rng.random::<f64>());
        let exact = gp_condition(&r, &rs, &prior, &y, 0.0).unwrap();
        for i in 0..5 {
            assert!(exact.cov[(i, i)] >= -1e-10);
            assert!(exact.cov[(i, i)] <= prior[(i, i)] + 1e-10);
        }
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let c = gp_condition(&r, &rs, &prior, &y, eps).unwrap();
            let diff = (&c.mean - &exact.mean).amax().max((&c.cov - &exact.cov).amax());
            assert!(diff < prev);
            prev = diff;
        }
        assert!(prev < 1e-4);
    }
}
