//! Discrepancy covariance transforms.
//!
//! The scaled GaSP (S-GaSP) discretized on `N_C` constraint points has the
//! correlation
//!
//! ```text
//! c_z(xa, xb) = c(xa, xb) - r_C(xa)^T (R_C + N_C/lambda I)^{-1} r_C(xb)
//! ```
//!
//! which is the predictive covariance of a zero-mean GaSP after observing the
//! constraint points with i.i.d. noise of variance `N_C / lambda`. The
//! orthogonal GaSP (O-GaSP) instead removes the component of the process along
//! the parameter gradient of the computer model, with the integrals replaced by
//! a midpoint rule on the input rectangle.

use nalgebra::{DMatrix, DVector};

use crate::calib::{ComputerModel, Domain, MeanBasis};
use crate::covcore::{symmetrize, Factor};
use crate::error::{Error, Result};
use crate::kernel::{corr_matrix, corr_matrix_sym, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscrepancyMode {
    #[default]
    Gasp,
    Sgasp,
    Ogasp,
}

impl DiscrepancyMode {
    pub fn name(&self) -> &'static str {
        match self {
            DiscrepancyMode::Gasp => "gasp",
            DiscrepancyMode::Sgasp => "sgasp",
            DiscrepancyMode::Ogasp => "ogasp",
        }
    }
}

/// Where the squared-norm constraint of the S-GaSP is discretized.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ConstraintPoints {
    /// Reuse the training inputs (`X_C = X`).
    #[default]
    Data,
    Explicit(DMatrix<f64>),
}

#[derive(Clone)]
pub struct DiscrepancySpec {
    pub mode: DiscrepancyMode,
    /// Family, roughness and (when used standalone) the ranges of `c^delta`.
    pub kernel: KernelSpec,
    pub mean_basis: MeanBasis,
    pub constraint_points: ConstraintPoints,
    /// Scaling parameter; `None` means `n / 2` with `n` the number of training rows.
    pub lambda: Option<f64>,
    /// Midpoint-rule nodes per input dimension for the O-GaSP integrals.
    pub quad_points: Option<usize>,
    /// Finite-difference step for the O-GaSP parameter gradient.
    pub grad_step: f64,
}

impl std::fmt::Debug for DiscrepancySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscrepancySpec")
            .field("mode", &self.mode)
            .field("kernel", &self.kernel)
            .field("q_delta", &self.mean_basis.len())
            .field("constraint_points", &self.constraint_points)
            .field("lambda", &self.lambda)
            .field("quad_points", &self.quad_points)
            .finish()
    }
}

impl DiscrepancySpec {
    pub fn new(mode: DiscrepancyMode, kernel: KernelSpec) -> Self {
        DiscrepancySpec {
            mode,
            kernel,
            mean_basis: MeanBasis::zero(),
            constraint_points: ConstraintPoints::Data,
            lambda: None,
            quad_points: None,
            grad_step: 1e-5,
        }
    }

    pub fn gasp(kernel: KernelSpec) -> Self {
        Self::new(DiscrepancyMode::Gasp, kernel)
    }

    pub fn sgasp(kernel: KernelSpec) -> Self {
        Self::new(DiscrepancyMode::Sgasp, kernel)
    }

    pub fn ogasp(kernel: KernelSpec) -> Self {
        Self::new(DiscrepancyMode::Ogasp, kernel)
    }

    pub fn with_mean_basis(mut self, basis: MeanBasis) -> Self {
        self.mean_basis = basis;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_constraint_points(mut self, points: DMatrix<f64>) -> Self {
        self.constraint_points = ConstraintPoints::Explicit(points);
        self
    }

    pub fn with_quad_points(mut self, q: usize) -> Self {
        self.quad_points = Some(q);
        self
    }

    /// Scaling parameter actually used for `n` training rows.
    pub fn resolved_lambda(&self, n: usize) -> Result<f64> {
        let lambda = self.lambda.unwrap_or(n as f64 / 2.0);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(lambda)
    }

    pub fn resolved_quad_points(&self, p_x: usize) -> usize {
        self.quad_points.unwrap_or(if p_x <= 1 { 200 } else { 40 })
    }

    fn constraint_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.constraint_points {
            ConstraintPoints::Data => Ok(x.clone()),
            ConstraintPoints::Explicit(xc) => {
                if xc.ncols() != x.ncols() {
                    return Err(Error::Shape(format!(
                        "constraint points have {} columns, inputs have {}",
                        xc.ncols(),
                        x.ncols()
                    )));
                }
                if xc.nrows() == 0 {
                    return Err(Error::Argument("no constraint points".into()));
                }
                Ok(xc.clone())
            }
        }
    }

    /// Build the S-GaSP transform anchored at the training inputs `x`.
    pub fn scaled_kernel(&self, x: &DMatrix<f64>, kernel: &KernelSpec) -> Result<ScaledKernel> {
        let xc = self.constraint_matrix(x)?;
        let lambda = self.resolved_lambda(x.nrows())?;
        ScaledKernel::new(kernel.clone(), xc, lambda)
    }
}

/// Discretized S-GaSP correlation with a cached factor of `R_C + N_C/lambda I`.
#[derive(Debug, Clone)]
pub struct ScaledKernel {
    kernel: KernelSpec,
    xc: DMatrix<f64>,
    lambda: f64,
    factor: Factor,
}

impl ScaledKernel {
    pub fn new(kernel: KernelSpec, xc: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        let nc = xc.nrows();
        let mut rc = corr_matrix_sym(&xc, &kernel)?;
        let noise = nc as f64 / lambda;
        for i in 0..nc {
            rc[(i, i)] += noise;
        }
        let factor = Factor::new(&rc)?;
        Ok(ScaledKernel {
            kernel,
            xc,
            lambda,
            factor,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_constraints(&self) -> usize {
        self.xc.nrows()
    }

    // L^{-1} r_C(X) for the rows of x (N_C × m).
    fn whitened(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rc = corr_matrix(&self.xc, x, &self.kernel)?;
        Ok(self.factor.whiten_mat(&rc))
    }

    /// `R_z^a` over the rows of `x`.
    pub fn cov_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = self.whitened(x)?;
        let mut out = corr_matrix_sym(x, &self.kernel)? - w.tr_mul(&w);
        symmetrize(&mut out);
        Ok(out)
    }

    /// Cross-covariance `c_z^a(xa_i, xb_j)`.
    pub fn cov(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let wa = self.whitened(xa)?;
        let wb = self.whitened(xb)?;
        Ok(corr_matrix(xa, xb, &self.kernel)? - wa.tr_mul(&wb))
    }

    /// `c_z^a(x, x)` for every row.
    pub fn diag(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let w = self.whitened(x)?;
        Ok(DVector::from_fn(x.nrows(), |j, _| 1.0 - w.column(j).norm_squared()))
    }
}

/// `R_z^a` for the training inputs under an S-GaSP spec.
pub fn sgasp_cov(x: &DMatrix<f64>, spec: &DiscrepancySpec) -> Result<DMatrix<f64>> {
    require_mode(spec, DiscrepancyMode::Sgasp)?;
    spec.scaled_kernel(x, &spec.kernel)?.cov_sym(x)
}

/// Cross-covariance `r_z^a` (n × k) between training and new inputs, and the
/// transformed prior variance `c_z^a(x*, x*)` of each new input.
pub fn sgasp_cross_cov(
    x: &DMatrix<f64>,
    xstar: &DMatrix<f64>,
    spec: &DiscrepancySpec,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    require_mode(spec, DiscrepancyMode::Sgasp)?;
    let sk = spec.scaled_kernel(x, &spec.kernel)?;
    Ok((sk.cov(x, xstar)?, sk.diag(xstar)?))
}

fn require_mode(spec: &DiscrepancySpec, mode: DiscrepancyMode) -> Result<()> {
    if spec.mode != mode {
        return Err(Error::Argument(format!(
            "operation requires {} mode, spec is {}",
            mode.name(),
            spec.mode.name()
        )));
    }
    Ok(())
}

/// Midpoint-rule grid on a rectangle: `q` nodes per axis, equal weights.
pub fn midpoint_grid(domain: &Domain, q: usize) -> Result<(DMatrix<f64>, f64)> {
    if q == 0 {
        return Err(Error::Argument("quadrature needs at least one node per axis".into()));
    }
    let p = domain.dim();
    let total = q
        .checked_pow(p as u32)
        .ok_or_else(|| Error::Argument("quadrature grid too large".into()))?;
    let mut nodes = DMatrix::zeros(total, p);
    for idx in 0..total {
        let mut rem = idx;
        for l in 0..p {
            let k = rem % q;
            rem /= q;
            let (a, b) = domain.bounds(l);
            nodes[(idx, l)] = a + (b - a) * (k as f64 + 0.5) / q as f64;
        }
    }
    Ok((nodes, domain.volume() / total as f64))
}

/// O-GaSP correlation `c(x, x') - g(x)^T G^{-1} g(x')` with quadrature integrals.
#[derive(Debug, Clone)]
pub struct OgaspKernel {
    base: KernelSpec,
    nodes: DMatrix<f64>,
    // weight * gradient at each node (m × p_theta)
    weighted_grad: DMatrix<f64>,
    g_factor: Factor,
}

impl OgaspKernel {
    /// `model_grad` returns `d f^M(xi, theta) / d theta` at fixed `theta`.
    pub fn new<G>(base: &KernelSpec, model_grad: G, domain: &Domain, quad_points: usize) -> Result<Self>
    where
        G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        use rayon::prelude::*;

        if domain.dim() != base.dim() {
            return Err(Error::Shape(format!(
                "{}-dimensional domain for a {}-dimensional kernel",
                domain.dim(),
                base.dim()
            )));
        }
        let (nodes, weight) = midpoint_grid(domain, quad_points)?;
        let m = nodes.nrows();
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let xi: Vec<f64> = nodes.row(j).iter().copied().collect();
                model_grad(&xi)
            })
            .collect::<Result<_>>()?;
        let p_theta = rows.first().map(|r| r.len()).unwrap_or(0);
        if p_theta == 0 {
            return Err(Error::Argument("O-GaSP needs at least one calibration parameter".into()));
        }
        if rows.iter().any(|r| r.len() != p_theta) {
            return Err(Error::Shape("gradient length varies across nodes".into()));
        }
        let weighted_grad = DMatrix::from_fn(m, p_theta, |j, k| weight * rows[j][k]);
        let c_nodes = corr_matrix_sym(&nodes, base)?;
        let mut g = weighted_grad.tr_mul(&(&c_nodes * &weighted_grad));
        symmetrize(&mut g);
        let trace = g.trace();
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(Error::numerical(
                "O-GaSP Gram matrix G is singular; increase the quadrature points or check the model gradient",
            ));
        }
        let ridge = 1e-10 * trace / p_theta as f64;
        for k in 0..p_theta {
            g[(k, k)] += ridge;
        }
        let g_factor = Factor::new(&g).map_err(|_| {
            Error::numerical("O-GaSP Gram matrix G is singular; increase the quadrature points")
        })?;
        Ok(OgaspKernel {
            base: base.clone(),
            nodes,
            weighted_grad,
            g_factor,
        })
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    // L_G^{-1} g(x)  (p_theta × rows of x)
    fn whitened_g(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = corr_matrix(x, &self.nodes, &self.base)?;
        let g = c * &self.weighted_grad;
        Ok(self.g_factor.whiten_mat(&g.transpose()))
    }

    /// `g(x)` for each row of `x` (rows × p_theta).
    pub fn g(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(corr_matrix(x, &self.nodes, &self.base)? * &self.weighted_grad)
    }

    pub fn cov(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let va = self.whitened_g(xa)?;
        let vb = self.whitened_g(xb)?;
        Ok(corr_matrix(xa, xb, &self.base)? - va.tr_mul(&vb))
    }

    pub fn cov_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let v = self.whitened_g(x)?;
        let mut out = corr_matrix_sym(x, &self.base)? - v.tr_mul(&v);
        symmetrize(&mut out);
        Ok(out)
    }

    pub fn diag(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let v = self.whitened_g(x)?;
        Ok(DVector::from_fn(x.nrows(), |j, _| 1.0 - v.column(j).norm_squared()))
    }

    /// Quadrature of `grad(xi) * c_O(x, xi)` over the nodes, for each row of `x`.
    pub fn orthogonality_residual(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cov(x, &self.nodes)?;
        Ok(c * &self.weighted_grad)
    }
}

/// Evaluate the O-GaSP kernel on two sets of inputs.
pub fn ogasp_kernel<G>(
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    base_kernel: &KernelSpec,
    model_grad: G,
    domain: &Domain,
    quad_points: usize,
) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    OgaspKernel::new(base_kernel, model_grad, domain, quad_points)?.cov(xa, xb)
}

/// Central-difference gradient of `f^M(x, theta)` in `theta` at fixed `theta`.
///
/// Components closer than `step` to a bound of the parameter box fall back to
/// a one-sided difference.
pub fn model_grad_fd(
    model: &ComputerModel,
    theta: &[f64],
    step: f64,
) -> Result<impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    if theta.len() != model.p_theta() {
        return Err(Error::Shape(format!(
            "theta of length {} for a model with {} parameters",
            theta.len(),
            model.p_theta()
        )));
    }
    let theta = theta.to_vec();
    let model = model.clone();
    let bounds = model.theta_bounds().clone();
    Ok(move |x: &[f64]| {
        let mut out = Vec::with_capacity(theta.len());
        let mut t = theta.clone();
        for k in 0..theta.len() {
            let (lo, hi) = bounds.bounds(k);
            let up = (theta[k] + step).min(hi.max(theta[k]));
            let down = (theta[k] - step).max(lo.min(theta[k]));
            let (up, down) = if up - down > 0.0 { (up, down) } else { (theta[k] + step, theta[k] - step) };
            t[k] = up;
            let fu = model.eval(x, &t)?;
            t[k] = down;
            let fd = model.eval(x, &t)?;
            t[k] = theta[k];
            out.push((fu - fd) / (up - down));
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covcore::gp_condition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
    }

    // Posterior covariance of a zero-mean GaSP observed at the constraint points.
    fn noisy_conditioning_oracle(x: &DMatrix<f64>, xc: &DMatrix<f64>, k: &KernelSpec, lambda: f64) -> DMatrix<f64> {
        let rc = corr_matrix_sym(xc, k).unwrap();
        let rcx = corr_matrix(xc, x, k).unwrap();
        let prior = corr_matrix_sym(x, k).unwrap();
        let zeros = DVector::zeros(xc.nrows());
        gp_condition(&rc, &rcx, &prior, &zeros, xc.nrows() as f64 / lambda).unwrap().cov
    }

    #[test]
    fn vanishing_lambda_gives_gasp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_design(&mut rng, 15, 2);
        let k = KernelSpec::matern52(vec![0.3, 0.5]).unwrap();
        let spec = DiscrepancySpec::sgasp(k.clone()).with_lambda(1e-10);
        let rz = sgasp_cov(&x, &spec).unwrap();
        let r = corr_matrix_sym(&x, &k).unwrap();
        assert!((rz - r).amax() <= 1e-8);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_design(&mut rng, 10, 1);
        let k = KernelSpec::matern52(vec![0.1]).unwrap();
        let spec = DiscrepancySpec::sgasp(k).with_lambda(1e12);
        assert!(sgasp_cov(&x, &spec).unwrap().amax() <= 1e-6);
    }

    #[test]
    fn equals_noisy_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = rng.random_range(2..40);
            let p = rng.random_range(1..4);
            let x = random_design(&mut rng, n, p);
            let range: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.0)).collect();
            let k = KernelSpec::matern52(range).unwrap();
            let lambda = n as f64 * [0.125, 0.5, 2.0][trial % 3];
            let explicit = trial % 2 == 0;
            let xc = if explicit { random_design(&mut rng, n + 3, p) } else { x.clone() };
            let mut spec = DiscrepancySpec::sgasp(k.clone()).with_lambda(lambda);
            if explicit {
                spec = spec.with_constraint_points(xc.clone());
            }
            let rz = sgasp_cov(&x, &spec).unwrap();
            let oracle = noisy_conditioning_oracle(&x, &xc, &k, lambda);
            assert!((rz - oracle).amax() <= 1e-10);
        }
    }

    #[test]
    fn default_lambda_is_half_n() {
        let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
        assert_eq!(spec.resolved_lambda(30).unwrap(), 15.0);
        assert!(spec.clone().with_lambda(0.0).resolved_lambda(3).is_err());
        let gasp = DiscrepancySpec::gasp(KernelSpec::matern52(vec![1.0]).unwrap());
        assert!(sgasp_cov(&DMatrix::zeros(2, 1), &gasp).is_err());
    }

    #[test]
    fn cross_cov_limits_and_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_design(&mut rng, 8, 1);
        let xs = random_design(&mut rng, 3, 1);
        let k = KernelSpec::matern52(vec![0.25]).unwrap();

        let tiny = DiscrepancySpec::sgasp(k.clone()).with_lambda(1e-10);
        let (rz, _) = sgasp_cross_cov(&x, &xs, &tiny).unwrap();
        assert!((rz - corr_matrix(&x, &xs, &k).unwrap()).amax() <= 1e-8);

        let spec = DiscrepancySpec::sgasp(k.clone());
        let full = sgasp_cov(&x, &spec).unwrap();
        let (cross, diag) = sgasp_cross_cov(&x, &x.rows(2, 1).into_owned(), &spec).unwrap();
        for i in 0..8 {
            assert!((cross[(i, 0)] - full[(i, 2)]).abs() <= 1e-10);
        }
        assert!((diag[0] - full[(2, 2)]).abs() <= 1e-10);
    }

    #[test]
    fn cross_cov_block_extraction() {
        // Assemble the (n+k)x(n+k) transformed covariance with the oracle and read off blocks.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_design(&mut rng, 8, 1);
        let xs = random_design(&mut rng, 3, 1);
        let k = KernelSpec::matern52(vec![0.2]).unwrap();
        let lambda = 4.0;
        let mut all = DMatrix::zeros(11, 1);
        all.rows_mut(0, 8).copy_from(&x);
        all.rows_mut(8, 3).copy_from(&xs);
        let joint = noisy_conditioning_oracle(&all, &x, &k, lambda);
        let spec = DiscrepancySpec::sgasp(k).with_lambda(lambda);
        let (cross, diag) = sgasp_cross_cov(&x, &xs, &spec).unwrap();
        assert!((cross - joint.view((0, 8), (8, 3))).amax() <= 1e-10);
        for j in 0..3 {
            assert!((diag[j] - joint[(8 + j, 8 + j)]).abs() <= 1e-10);
        }
    }

    #[test]
    fn shrinkage_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 24;
        let x = random_design(&mut rng, n, 2);
        let k = KernelSpec::matern52(vec![0.4, 0.3]).unwrap();
        let r = corr_matrix_sym(&x, &k).unwrap();
        let mut prev = f64::INFINITY;
        for f in [0.125, 0.25, 0.5, 1.0, 2.0] {
            let rz = sgasp_cov(&x, &DiscrepancySpec::sgasp(k.clone()).with_lambda(f * n as f64)).unwrap();
            for i in 0..n {
                assert!(rz[(i, i)] <= r[(i, i)] + 1e-12);
            }
            let tr = rz.trace();
            assert!(tr <= prev);
            prev = tr;
            assert!(rz.symmetric_eigen().eigenvalues.min() > -1e-10);
        }
    }

    fn unit_domain() -> Domain {
        Domain::new(vec![(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn midpoint_grid_layout() {
        let d = Domain::new(vec![(0.0, 2.0), (1.0, 2.0)]).unwrap();
        let (nodes, w) = midpoint_grid(&d, 4).unwrap();
        assert_eq!(nodes.nrows(), 16);
        assert!((w - 2.0 / 16.0).abs() < 1e-15);
        assert!((nodes[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((nodes[(0, 1)] - 1.125).abs() < 1e-15);
    }

    #[test]
    fn ogasp_symmetry_orthogonality_psd() {
        let k = KernelSpec::matern52(vec![0.3]).unwrap();
        let grad = |xi: &[f64]| -> Result<Vec<f64>> { Ok(vec![xi[0] * (1.7 * xi[0]).cos()]) };
        let og = OgaspKernel::new(&k, grad, &unit_domain(), 200).unwrap();
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64 / 29.0);
        let c = og.cov(&x, &x).unwrap();
        assert!((&c - c.transpose()).amax() <= 1e-12);
        assert!(og.orthogonality_residual(&x).unwrap().amax() <= 1e-6);
        let gram = og.cov_sym(&x).unwrap();
        assert!(gram.clone().symmetric_eigen().eigenvalues.min() >= -1e-8);
        let d = og.diag(&x).unwrap();
        for i in 0..30 {
            assert!((d[i] - gram[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn ogasp_invariant_to_gradient_scale() {
        let k = KernelSpec::matern52(vec![0.5]).unwrap();
        let x = DMatrix::from_fn(7, 1, |i, _| i as f64 / 6.0);
        let base = OgaspKernel::new(&k, |xi: &[f64]| Ok(vec![1.0 + xi[0]]), &unit_domain(), 100)
            .unwrap()
            .cov_sym(&x)
            .unwrap();
        for s in [1e-3, 1e-6] {
            let scaled = OgaspKernel::new(&k, move |xi: &[f64]| Ok(vec![s * (1.0 + xi[0])]), &unit_domain(), 100)
                .unwrap()
                .cov_sym(&x)
                .unwrap();
            assert!((&scaled - &base).amax() < 1e-8);
        }
    }

    #[test]
    fn ogasp_zero_gradient_is_singular() {
        let k = KernelSpec::matern52(vec![0.5]).unwrap();
        let err = OgaspKernel::new(&k, |_: &[f64]| Ok(vec![0.0]), &unit_domain(), 50).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    fn linear_model() -> ComputerModel {
        ComputerModel::new(|x: &[f64], t: &[f64]| t[0] * x[0], Domain::new(vec![(-5.0, 5.0)]).unwrap())
    }

    #[test]
    fn finite_difference_gradients() {
        let m = linear_model();
        let g = model_grad_fd(&m, &[0.7], 1e-4).unwrap();
        assert!((g(&[0.3]).unwrap()[0] - 0.3).abs() < 1e-10);

        let sine = ComputerModel::new(|x: &[f64], t: &[f64]| (t[0] * x[0]).sin(), Domain::new(vec![(0.0, 3.0)]).unwrap());
        let g = model_grad_fd(&sine, &[1.0], 1e-4).unwrap();
        assert!((g(&[1.0]).unwrap()[0] - 1f64.cos()).abs() < 1e-6);

        // error shrinks with the step until roundoff takes over
        let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|h| {
                let g = model_grad_fd(&sine, &[1.0], *h).unwrap();
                (g(&[1.0]).unwrap()[0] - 1f64.cos()).abs()
            })
            .collect();
        assert!(errs[1] < errs[0]);
        assert!(errs[2] < 1e-8);

        // boundary falls back to one-sided differences
        let g = model_grad_fd(&sine, &[0.0], 1e-6).unwrap();
        assert!((g(&[1.0]).unwrap()[0] - 1.0).abs() < 1e-5);
        assert!(model_grad_fd(&sine, &[1.0, 2.0], 1e-4).is_err());
        assert!(model_grad_fd(&sine, &[1.0], 0.0).is_err());
    }
}
