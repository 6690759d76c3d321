//! The calibration model: field data, computer models, the marginal likelihood
//! of the field data, priors, the parameter transform and plug-in prediction.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::covcore::{symmetrize, Factor};
use crate::error::{Error, Result};
use crate::kernel::{corr_matrix, corr_matrix_sym, KernelSpec};
use crate::sgasp::{model_grad_fd, DiscrepancyMode, DiscrepancySpec, OgaspKernel, ScaledKernel};

/// Floor added to `eta` before taking logs, so `eta = 0` stays representable.
pub const ETA_FLOOR: f64 = 1e-12;

/// Closed box `[a_1, b_1] x ... x [a_p, b_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &bounds {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
            }
        }
        Ok(Domain { bounds })
    }

    pub fn unit(p: usize) -> Self {
        Domain {
            bounds: vec![(0.0, 1.0); p],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self, l: usize) -> (f64, f64) {
        self.bounds[l]
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn width(&self, l: usize) -> f64 {
        self.bounds[l].1 - self.bounds[l].0
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|l| self.width(l)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Map a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(u, (a, b))| a + (b - a) * u).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FieldDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    domain: Domain,
}

impl FieldDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, domain: Domain) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Argument(format!("need at least 2 observations, got {n}")));
        }
        if y.len() != n {
            return Err(Error::Shape(format!("{n} input rows but {} observations", y.len())));
        }
        if x.ncols() != domain.dim() || x.ncols() == 0 {
            return Err(Error::Shape(format!(
                "inputs have {} columns, domain has {} dimensions",
                x.ncols(),
                domain.dim()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite value in field data".into()));
        }
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            if !domain.contains(&row) {
                return Err(Error::Domain(format!("row {i} lies outside the input domain")));
            }
            for j in 0..i {
                if x.row(i) == x.row(j) {
                    return Err(Error::Argument(format!("rows {j} and {i} are duplicated")));
                }
            }
        }
        Ok(FieldDataset { x, y, domain })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    /// Same inputs with a different response vector.
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Shape(format!("{} rows but {} observations", self.n(), y.len())));
        }
        Ok(FieldDataset {
            x: self.x.clone(),
            y,
            domain: self.domain.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Exact,
    Emulated,
}

pub type Evaluator = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// `f^M(x, theta)` together with the box the parameters live in.
#[derive(Clone)]
pub struct ComputerModel {
    evaluator: Evaluator,
    theta_bounds: Domain,
    kind: ModelKind,
}

impl fmt::Debug for ComputerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComputerModel")
            .field("theta_bounds", &self.theta_bounds)
            .field("kind", &self.kind)
            .finish()
    }
}

impl ComputerModel {
    pub fn new<F>(f: F, theta_bounds: Domain) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::with_kind(Arc::new(f), theta_bounds, ModelKind::Exact)
    }

    pub fn with_kind(evaluator: Evaluator, theta_bounds: Domain, kind: ModelKind) -> Self {
        ComputerModel {
            evaluator,
            theta_bounds,
            kind,
        }
    }

    /// `f^M = 0` with no calibration parameters.
    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, Domain::new(Vec::new()).unwrap())
    }

    pub fn p_theta(&self) -> usize {
        self.theta_bounds.dim()
    }

    pub fn theta_bounds(&self) -> &Domain {
        &self.theta_bounds
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn eval(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        let v = (self.evaluator)(x, theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Model(format!("non-finite output at x = {x:?}, theta = {theta:?}")))
        }
    }

    /// Model output at every row of `x`.
    pub fn eval_rows(&self, x: &DMatrix<f64>, theta: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(x.nrows());
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = x[(i, l)];
            }
            out[i] = self.eval(&row, theta)?;
        }
        Ok(out)
    }
}

pub type BasisFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Regression functions `h_1, ..., h_q` of a mean.
#[derive(Clone, Default)]
pub struct MeanBasis {
    funcs: Vec<BasisFn>,
}

impl fmt::Debug for MeanBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MeanBasis(q = {})", self.funcs.len())
    }
}

impl MeanBasis {
    pub fn zero() -> Self {
        MeanBasis { funcs: Vec::new() }
    }

    pub fn intercept() -> Self {
        MeanBasis {
            funcs: vec![Arc::new(|_: &[f64]| 1.0)],
        }
    }

    /// `(1, x_1, ..., x_p)`.
    pub fn linear(p: usize) -> Self {
        let mut funcs: Vec<BasisFn> = vec![Arc::new(|_: &[f64]| 1.0)];
        for l in 0..p {
            funcs.push(Arc::new(move |x: &[f64]| x[l]));
        }
        MeanBasis { funcs }
    }

    pub fn custom(funcs: Vec<BasisFn>) -> Self {
        MeanBasis { funcs }
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    /// Design matrix `H` with `H_ij = h_j(x_i)`.
    pub fn matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(x.nrows(), self.len());
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = x[(i, l)];
            }
            for (j, f) in self.funcs.iter().enumerate() {
                let v = f(&row);
                if !v.is_finite() {
                    return Err(Error::Model(format!("basis function {j} is not finite at row {i}")));
                }
                h[(i, j)] = v;
            }
        }
        Ok(h)
    }
}

/// `mu^delta(x_i) = sum_j h_j(x_i) beta_j`.
pub fn mean_basis_eval(x: &DMatrix<f64>, spec: &DiscrepancySpec, beta: &[f64]) -> Result<DVector<f64>> {
    if beta.len() != spec.mean_basis.len() {
        return Err(Error::Shape(format!(
            "{} coefficients for {} basis functions",
            beta.len(),
            spec.mean_basis.len()
        )));
    }
    if beta.is_empty() {
        return Ok(DVector::zeros(x.nrows()));
    }
    Ok(spec.mean_basis.matrix(x)? * DVector::from_column_slice(beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibParams {
    pub theta: Vec<f64>,
    pub beta_delta: Vec<f64>,
    /// Inverse ranges of the discrepancy kernel.
    pub psi_delta: Vec<f64>,
    pub sigma2_delta: f64,
    /// Noise-to-discrepancy variance ratio `sigma2_0 / sigma2_delta`.
    pub eta: f64,
}

impl CalibParams {
    pub fn sigma2_noise(&self) -> f64 {
        self.eta * self.sigma2_delta
    }

    pub fn range(&self) -> Vec<f64> {
        self.psi_delta.iter().map(|p| 1.0 / p).collect()
    }

    pub fn validate(&self, model: &ComputerModel, spec: &DiscrepancySpec) -> Result<()> {
        if self.theta.len() != model.p_theta() {
            return Err(Error::Shape(format!(
                "theta has length {}, model expects {}",
                self.theta.len(),
                model.p_theta()
            )));
        }
        if !model.theta_bounds().contains(&self.theta) {
            return Err(Error::Domain(format!("theta {:?} outside its bounds", self.theta)));
        }
        if self.beta_delta.len() != spec.mean_basis.len() {
            return Err(Error::Shape(format!(
                "{} mean coefficients for {} basis functions",
                self.beta_delta.len(),
                spec.mean_basis.len()
            )));
        }
        if self.psi_delta.len() != spec.kernel.dim() {
            return Err(Error::Shape(format!(
                "{} inverse ranges for a {}-dimensional kernel",
                self.psi_delta.len(),
                spec.kernel.dim()
            )));
        }
        if self.psi_delta.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Domain("inverse ranges must be positive".into()));
        }
        if !(self.sigma2_delta.is_finite() && self.sigma2_delta > 0.0) {
            return Err(Error::Domain("sigma2_delta must be positive".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Domain("eta must be non-negative".into()));
        }
        if self.theta.iter().chain(&self.beta_delta).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(())
    }
}

pub type LogDensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Prior on `theta` (uniform on its box unless overridden) times the jointly
/// robust prior on `(psi, eta)` times `1 / sigma2_delta`.
#[derive(Clone)]
pub struct PriorSpec {
    pub theta_bounds: Domain,
    pub theta_log_density: Option<LogDensity>,
    pub jr_a: f64,
    pub jr_b: f64,
    pub jr_c: Vec<f64>,
}

impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PriorSpec")
            .field("theta_bounds", &self.theta_bounds)
            .field("custom_theta_prior", &self.theta_log_density.is_some())
            .field("jr_a", &self.jr_a)
            .field("jr_b", &self.jr_b)
            .field("jr_c", &self.jr_c)
            .finish()
    }
}

impl PriorSpec {
    /// `a = 1/2 - p_x`, `b = 1`, `C_l = |X_l| n^{-1/p_x}`.
    pub fn default_for(data: &FieldDataset, model: &ComputerModel) -> Self {
        let p = data.p_x() as f64;
        let scale = (data.n() as f64).powf(-1.0 / p);
        PriorSpec {
            theta_bounds: model.theta_bounds().clone(),
            theta_log_density: None,
            jr_a: 0.5 - p,
            jr_b: 1.0,
            jr_c: (0..data.p_x()).map(|l| data.domain().width(l) * scale).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.jr_c.len() as f64;
        if !(self.jr_a > -p - 1.0) {
            return Err(Error::Domain(format!("jointly robust a = {} must exceed -p_x - 1", self.jr_a)));
        }
        if !(self.jr_b > 0.0) {
            return Err(Error::Domain("jointly robust b must be positive".into()));
        }
        if self.jr_c.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Domain("jointly robust C must be positive".into()));
        }
        Ok(())
    }
}

/// Log prior density up to an additive constant; `-inf` off the support.
pub fn log_prior(params: &CalibParams, prior: &PriorSpec) -> f64 {
    if !prior.theta_bounds.contains(&params.theta) {
        return f64::NEG_INFINITY;
    }
    if params.psi_delta.len() != prior.jr_c.len()
        || params.psi_delta.iter().any(|p| !(*p > 0.0))
        || !(params.eta >= 0.0)
        || !(params.sigma2_delta > 0.0)
    {
        return f64::NEG_INFINITY;
    }
    let t: f64 = prior.jr_c.iter().zip(&params.psi_delta).map(|(c, p)| c * p).sum::<f64>() + params.eta;
    let theta_part = match &prior.theta_log_density {
        Some(f) => f(&params.theta),
        None => 0.0,
    };
    let v = theta_part + prior.jr_a * t.ln() - prior.jr_b * t - params.sigma2_delta.ln();
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Discrepancy correlation for one parameter setting, anchored at the training inputs.
#[derive(Debug, Clone)]
pub enum DiscrepancyKernel {
    Gasp(KernelSpec),
    Sgasp(ScaledKernel),
    Ogasp(OgaspKernel),
}

impl DiscrepancyKernel {
    pub fn build(
        spec: &DiscrepancySpec,
        data: &FieldDataset,
        model: &ComputerModel,
        theta: &[f64],
        psi: &[f64],
    ) -> Result<Self> {
        let range: Vec<f64> = psi.iter().map(|p| 1.0 / p).collect();
        let kernel = spec.kernel.with_range(range)?;
        Ok(match spec.mode {
            DiscrepancyMode::Gasp => DiscrepancyKernel::Gasp(kernel),
            DiscrepancyMode::Sgasp => DiscrepancyKernel::Sgasp(spec.scaled_kernel(data.x(), &kernel)?),
            DiscrepancyMode::Ogasp => {
                let grad = model_grad_fd(model, theta, spec.grad_step)?;
                let q = spec.resolved_quad_points(data.p_x());
                DiscrepancyKernel::Ogasp(OgaspKernel::new(&kernel, grad, data.domain(), q)?)
            }
        })
    }

    pub fn cov_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            DiscrepancyKernel::Gasp(k) => corr_matrix_sym(x, k),
            DiscrepancyKernel::Sgasp(k) => k.cov_sym(x),
            DiscrepancyKernel::Ogasp(k) => k.cov_sym(x),
        }
    }

    pub fn cov(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            DiscrepancyKernel::Gasp(k) => corr_matrix(xa, xb, k),
            DiscrepancyKernel::Sgasp(k) => k.cov(xa, xb),
            DiscrepancyKernel::Ogasp(k) => k.cov(xa, xb),
        }
    }

    pub fn diag(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            DiscrepancyKernel::Gasp(_) => Ok(DVector::from_element(x.nrows(), 1.0)),
            DiscrepancyKernel::Sgasp(k) => k.diag(x),
            DiscrepancyKernel::Ogasp(k) => k.diag(x),
        }
    }
}

/// Everything about the likelihood that does not depend on `sigma2_delta`.
#[derive(Debug, Clone)]
pub struct LikelihoodCore {
    pub kernel: DiscrepancyKernel,
    /// Factor of `K + eta I`.
    pub factor: Factor,
    /// `y - f^M - mu^delta`.
    pub resid: DVector<f64>,
    /// `resid^T (K + eta I)^{-1} resid`.
    pub quad: f64,
    pub log_det: f64,
}

impl LikelihoodCore {
    pub fn n(&self) -> usize {
        self.resid.len()
    }

    pub fn loglik(&self, sigma2: f64) -> f64 {
        let n = self.n() as f64;
        -0.5 * (n * (2.0 * PI).ln() + n * sigma2.ln() + self.log_det + self.quad / sigma2)
    }

    /// Maximizer of `loglik` over `sigma2`, i.e. `quad / n`.
    pub fn sigma2_hat(&self) -> f64 {
        self.quad / self.n() as f64
    }

    pub fn profile_loglik(&self) -> f64 {
        let n = self.n() as f64;
        -0.5 * (n * ((2.0 * PI).ln() + self.sigma2_hat().ln() + 1.0) + self.log_det)
    }
}

/// Builds the covariance `K + eta I` and the residual for the given mean and
/// kernel parameters.
pub fn likelihood_core(
    theta: &[f64],
    beta: &[f64],
    psi: &[f64],
    eta: f64,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
) -> Result<LikelihoodCore> {
    let kernel = DiscrepancyKernel::build(spec, data, model, theta, psi)?;
    let mut k = kernel.cov_sym(data.x())?;
    for i in 0..data.n() {
        k[(i, i)] += eta;
    }
    let factor = Factor::new(&k)?;
    let mean = model.eval_rows(data.x(), theta)? + mean_basis_eval(data.x(), spec, beta)?;
    let resid = data.y() - mean;
    let quad = factor.quad_form(&resid);
    let log_det = factor.log_det();
    Ok(LikelihoodCore {
        kernel,
        factor,
        resid,
        quad,
        log_det,
    })
}

/// Like [`likelihood_core`] with the mean coefficients set to their
/// generalized least squares value, which maximizes the likelihood for any
/// fixed `sigma2_delta`.
pub fn likelihood_core_gls(
    theta: &[f64],
    psi: &[f64],
    eta: f64,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
) -> Result<(LikelihoodCore, Vec<f64>)> {
    let q = spec.mean_basis.len();
    let mut core = likelihood_core(theta, &vec![0.0; q], psi, eta, data, model, spec)?;
    if q == 0 {
        return Ok((core, Vec::new()));
    }
    let h = spec.mean_basis.matrix(data.x())?;
    let hw = core.factor.whiten_mat(&h);
    let rw = core.factor.whiten(&core.resid);
    let gram = hw.tr_mul(&hw);
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Argument("mean basis matrix is rank deficient".into()))?
        .solve(&hw.tr_mul(&rw));
    core.resid -= &h * &beta;
    core.quad = core.factor.quad_form(&core.resid);
    Ok((core, beta.iter().copied().collect()))
}

/// Gaussian log-likelihood of the field data,
/// `y ~ N(f^M + mu^delta, sigma2_delta (K + eta I))`.
pub fn marginal_loglik(
    params: &CalibParams,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
) -> Result<f64> {
    params.validate(model, spec)?;
    let core = likelihood_core(
        &params.theta,
        &params.beta_delta,
        &params.psi_delta,
        params.eta,
        data,
        model,
        spec,
    )?;
    Ok(core.loglik(params.sigma2_delta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    /// `f^M(x*, theta) + mu^delta(x*)`.
    pub model_only_mean: DVector<f64>,
    pub full_mean: DVector<f64>,
    /// Variance of a new field observation, noise included.
    pub variance: DVector<f64>,
}

impl PredictiveResult {
    pub fn len(&self) -> usize {
        self.full_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full_mean.is_empty()
    }

    pub fn lower95(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.full_mean[i] - 1.96 * self.variance[i].sqrt())
    }

    pub fn upper95(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.full_mean[i] + 1.96 * self.variance[i].sqrt())
    }
}

/// Plug-in predictive distribution at the rows of `xstar`.
pub fn predict(
    params: &CalibParams,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
    xstar: &DMatrix<f64>,
) -> Result<PredictiveResult> {
    params.validate(model, spec)?;
    if xstar.ncols() != data.p_x() {
        return Err(Error::Shape(format!(
            "prediction inputs have {} columns, data have {}",
            xstar.ncols(),
            data.p_x()
        )));
    }
    let core = likelihood_core(
        &params.theta,
        &params.beta_delta,
        &params.psi_delta,
        params.eta,
        data,
        model,
        spec,
    )?;
    predict_with_core(params, &core, data, model, spec, xstar)
}

pub(crate) fn predict_with_core(
    params: &CalibParams,
    core: &LikelihoodCore,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
    xstar: &DMatrix<f64>,
) -> Result<PredictiveResult> {
    let model_only = model.eval_rows(xstar, &params.theta)? + mean_basis_eval(xstar, spec, &params.beta_delta)?;
    let cross = core.kernel.cov(data.x(), xstar)?;
    let prior = core.kernel.diag(xstar)?;
    let alpha = core.factor.solve(&core.resid);
    let full = &model_only + cross.tr_mul(&alpha);
    let w = core.factor.whiten_mat(&cross);
    let sigma2 = params.sigma2_delta;
    let variance = DVector::from_fn(xstar.nrows(), |j, _| {
        let reduced = (prior[j] - w.column(j).norm_squared()).max(0.0);
        sigma2 * reduced + sigma2 * params.eta
    });
    Ok(PredictiveResult {
        model_only_mean: model_only,
        full_mean: full,
        variance,
    })
}

/// Unconstrained coordinates `[logit theta, beta, ln psi, ln sigma2, ln(eta + floor)]`.
pub fn transform_params(params: &CalibParams, theta_bounds: &Domain) -> Vec<f64> {
    let mut v = Vec::with_capacity(params.theta.len() + params.beta_delta.len() + params.psi_delta.len() + 2);
    for (k, t) in params.theta.iter().enumerate() {
        let (a, b) = theta_bounds.bounds(k);
        v.push(((t - a) / (b - t)).ln());
    }
    v.extend_from_slice(&params.beta_delta);
    v.extend(params.psi_delta.iter().map(|p| p.ln()));
    v.push(params.sigma2_delta.ln());
    v.push((params.eta + ETA_FLOOR).ln());
    v
}

/// Inverse of [`transform_params`].
pub fn untransform_params(v: &[f64], theta_bounds: &Domain, q_delta: usize, p_x: usize) -> Result<CalibParams> {
    let p_theta = theta_bounds.dim();
    let expected = p_theta + q_delta + p_x + 2;
    if v.len() != expected {
        return Err(Error::Shape(format!("transformed vector has length {}, expected {expected}", v.len())));
    }
    let theta = (0..p_theta)
        .map(|k| {
            let (a, b) = theta_bounds.bounds(k);
            a + (b - a) * sigmoid(v[k])
        })
        .collect();
    let beta_delta = v[p_theta..p_theta + q_delta].to_vec();
    let psi_delta = v[p_theta + q_delta..p_theta + q_delta + p_x].iter().map(|u| u.exp()).collect();
    let sigma2_delta = v[expected - 2].exp();
    let eta = (v[expected - 1].exp() - ETA_FLOOR).max(0.0);
    Ok(CalibParams {
        theta,
        beta_delta,
        psi_delta,
        sigma2_delta,
        eta,
    })
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Dense `sigma2 (K + eta I)` for the training inputs; used by oracles and diagnostics.
pub fn field_covariance(
    params: &CalibParams,
    data: &FieldDataset,
    model: &ComputerModel,
    spec: &DiscrepancySpec,
) -> Result<DMatrix<f64>> {
    let kernel = DiscrepancyKernel::build(spec, data, model, &params.theta, &params.psi_delta)?;
    let mut k = kernel.cov_sym(data.x())? * params.sigma2_delta;
    for i in 0..data.n() {
        k[(i, i)] += params.sigma2_noise();
    }
    symmetrize(&mut k);
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covcore::{mvn_logdensity, MvnModel};
    use crate::kernel::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine_model() -> ComputerModel {
        ComputerModel::new(|x, t| (t[0] * x[0]).sin(), Domain::new(vec![(0.0, 40.0)]).unwrap())
    }

    fn sine_data(n: usize) -> FieldDataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| (10.0 * PI * x[(i, 0)]).sin() + 0.05 * ((i * 7 % 5) as f64 - 2.0));
        FieldDataset::new(x, y, Domain::unit(1)).unwrap()
    }

    fn params(theta: f64, psi: f64, sigma2: f64, eta: f64) -> CalibParams {
        CalibParams {
            theta: vec![theta],
            beta_delta: vec![],
            psi_delta: vec![psi],
            sigma2_delta: sigma2,
            eta,
        }
    }

    #[test]
    fn mean_basis_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let k = KernelSpec::matern52(vec![1.0]).unwrap();
        let spec = DiscrepancySpec::gasp(k.clone());
        assert_eq!(mean_basis_eval(&x, &spec, &[]).unwrap(), DVector::zeros(2));
        let spec = DiscrepancySpec::gasp(k.clone()).with_mean_basis(MeanBasis::intercept());
        assert_eq!(mean_basis_eval(&x, &spec, &[2.5]).unwrap(), DVector::from_element(2, 2.5));
        let spec = DiscrepancySpec::gasp(k).with_mean_basis(MeanBasis::linear(1));
        assert_eq!(mean_basis_eval(&x, &spec, &[1.0, 2.0]).unwrap(), DVector::from_vec(vec![1.0, 3.0]));
        assert!(mean_basis_eval(&x, &spec, &[1.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.1]);
        let y = DVector::zeros(3);
        assert!(FieldDataset::new(x, y.clone(), Domain::unit(1)).is_err());
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 1.5]);
        assert!(matches!(FieldDataset::new(x, y.clone(), Domain::unit(1)), Err(Error::Domain(_))));
        let x = DMatrix::from_column_slice(1, 1, &[0.1]);
        assert!(FieldDataset::new(x, DVector::zeros(1), Domain::unit(1)).is_err());
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.9]);
        assert!(FieldDataset::new(x, DVector::zeros(2), Domain::unit(1)).is_err());
    }

    #[test]
    fn loglik_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [DiscrepancyMode::Gasp, DiscrepancyMode::Sgasp, DiscrepancyMode::Ogasp] {
            let x = DMatrix::from_fn(6, 1, |_, _| rng.random::<f64>());
            let y = DVector::from_fn(6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let data = FieldDataset::new(x, y, Domain::unit(1)).unwrap();
            let model = ComputerModel::new(|x, t| t[0] * x[0] * x[0], Domain::new(vec![(-2.0, 2.0)]).unwrap());
            let spec = DiscrepancySpec::new(mode, KernelSpec::matern52(vec![1.0]).unwrap())
                .with_mean_basis(MeanBasis::intercept())
                .with_quad_points(100);
            let p = CalibParams {
                theta: vec![0.7],
                beta_delta: vec![0.3],
                psi_delta: vec![2.5],
                sigma2_delta: 1.7,
                eta: 0.05,
            };
            let ll = marginal_loglik(&p, &data, &model, &spec).unwrap();
            let mean = DVector::from_fn(6, |i, _| 0.7 * data.x()[(i, 0)].powi(2) + 0.3);
            let cov = field_covariance(&p, &data, &model, &spec).unwrap();
            let oracle = mvn_logdensity(data.y(), &MvnModel::new(mean, cov).unwrap()).unwrap();
            assert!((ll - oracle).abs() <= 1e-10, "{mode:?}: {ll} vs {oracle}");
        }
    }

    #[test]
    fn vanishing_lambda_matches_gasp() {
        let data = sine_data(30);
        let model = sine_model();
        let k = KernelSpec::matern52(vec![1.0]).unwrap();
        let gasp = DiscrepancySpec::gasp(k.clone());
        let sgasp = DiscrepancySpec::sgasp(k).with_lambda(1e-10);
        for j in 0..10 {
            let p = params(4.0 * j as f64, 8.0, 0.5, 1e-3);
            let a = marginal_loglik(&p, &data, &model, &gasp).unwrap();
            let b = marginal_loglik(&p, &data, &model, &sgasp).unwrap();
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn loglik_permutation_invariant() {
        let data = sine_data(12);
        let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        let x = DMatrix::from_fn(12, 1, |i, _| data.x()[(perm[i], 0)]);
        let y = DVector::from_fn(12, |i, _| data.y()[perm[i]]);
        let permuted = FieldDataset::new(x, y, Domain::unit(1)).unwrap();
        let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
        let p = params(31.0, 3.0, 0.2, 1e-2);
        let a = marginal_loglik(&p, &data, &sine_model(), &spec).unwrap();
        let b = marginal_loglik(&p, &permuted, &sine_model(), &spec).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn profile_maximizes_over_sigma2() {
        let data = sine_data(10);
        let spec = DiscrepancySpec::gasp(KernelSpec::matern52(vec![1.0]).unwrap());
        let core = likelihood_core(&[3.0], &[], &[2.0], 0.01, &data, &sine_model(), &spec).unwrap();
        let best = core.profile_loglik();
        assert!((best - core.loglik(core.sigma2_hat())).abs() < 1e-10);
        for f in [0.5, 0.9, 1.1, 2.0] {
            assert!(core.loglik(f * core.sigma2_hat()) < best);
        }
    }

    #[test]
    fn fig1_identity_small() {
        // With f^M = theta and y ~ N(0, R): E[l(0) - l(1)] = 1^T R^{-1} 1 / 2.
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let k = KernelSpec::pow_exp(vec![0.7], 1.9).unwrap();
        let r = corr_matrix_sym(&x, &k).unwrap();
        let f = Factor::new(&r).unwrap();
        let ones = DVector::from_element(3, 1.0);
        let oracle = 0.5 * f.quad_form(&ones);
        // l(0) - l(1) = -y^T R^-1 1 + 1^T R^-1 1 / 2 for every y, so evaluate at y = 0
        let data = FieldDataset::new(x, DVector::zeros(3), Domain::unit(1)).unwrap();
        let model = ComputerModel::new(|_, t| t[0], Domain::new(vec![(-1.0, 2.0)]).unwrap());
        let spec = DiscrepancySpec::gasp(k);
        let p0 = params(0.0, 1.0 / 0.7, 1.0, 0.0);
        let p1 = params(1.0, 1.0 / 0.7, 1.0, 0.0);
        let d = marginal_loglik(&p0, &data, &model, &spec).unwrap() - marginal_loglik(&p1, &data, &model, &spec).unwrap();
        assert!((d - oracle).abs() < 1e-9);
    }

    #[test]
    fn prior_examples() {
        let prior = PriorSpec {
            theta_bounds: Domain::new(vec![(0.0, 1.0)]).unwrap(),
            theta_log_density: None,
            jr_a: -0.5,
            jr_b: 1.0,
            jr_c: vec![1.0],
        };
        let p = params(0.5, 1.0, 1.0, 0.0);
        assert!((log_prior(&p, &prior) - (-1.0)).abs() < 1e-15);
        let mut q = p.clone();
        q.sigma2_delta = 2.0;
        assert!((log_prior(&p, &prior) - log_prior(&q, &prior) - 2f64.ln()).abs() < 1e-15);
        q.theta = vec![1.5];
        assert_eq!(log_prior(&q, &prior), f64::NEG_INFINITY);
        let mut r = p.clone();
        r.psi_delta = vec![-1.0];
        assert_eq!(log_prior(&r, &prior), f64::NEG_INFINITY);
    }

    #[test]
    fn default_prior_constants() {
        let data = sine_data(16);
        let prior = PriorSpec::default_for(&data, &sine_model());
        assert_eq!(prior.jr_a, -0.5);
        assert!((prior.jr_c[0] - 1.0 / 16.0).abs() < 1e-15);
        prior.validate().unwrap();
    }

    #[test]
    fn transform_examples() {
        let b = Domain::new(vec![(0.0, 40.0)]).unwrap();
        let p = params(20.0, std::f64::consts::E, 1.0, 0.0);
        let v = transform_params(&p, &b);
        assert!(v[0].abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
        let back = untransform_params(&v, &b, 0, 1).unwrap();
        assert!((back.eta - 0.0).abs() < 1e-12);
        assert!((back.theta[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_at_training_points() {
        let data = sine_data(10);
        let spec = DiscrepancySpec::sgasp(KernelSpec::matern52(vec![1.0]).unwrap());
        let p = params(3.0, 4.0, 1.0, 1e-12);
        let pred = predict(&p, &data, &sine_model(), &spec, data.x()).unwrap();
        for i in 0..10 {
            assert!((pred.full_mean[i] - data.y()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let data = sine_data(8);
        let spec = DiscrepancySpec::gasp(KernelSpec::matern52(vec![1.0]).unwrap());
        let p = params(3.0, 1000.0, 0.7, 0.1);
        let xs = DMatrix::from_column_slice(1, 1, &[0.5]);
        let pred = predict(&p, &data, &sine_model(), &spec, &xs).unwrap();
        assert!((pred.full_mean[0] - pred.model_only_mean[0]).abs() < 1e-10);
        assert!((pred.variance[0] - (0.7 + 0.07)).abs() < 1e-10);
        assert!((pred.model_only_mean[0] - (3.0 * xs[(0, 0)]).sin()).abs() < 1e-15);
    }

    #[test]
    fn prediction_matches_augmented_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mode in [DiscrepancyMode::Gasp, DiscrepancyMode::Sgasp] {
            let x = DMatrix::from_fn(6, 1, |_, _| rng.random::<f64>());
            let y = DVector::from_fn(6, |_, _| rng.random::<f64>());
            let data = FieldDataset::new(x.clone(), y, Domain::unit(1)).unwrap();
            let model = ComputerModel::new(|x, t| t[0] + x[0], Domain::new(vec![(-1.0, 1.0)]).unwrap());
            let k = KernelSpec::matern52(vec![1.0]).unwrap();
            let spec = DiscrepancySpec::new(mode, k.clone());
            let p = params(0.2, 3.0, 1.3, 0.04);
            let xs = DMatrix::from_column_slice(1, 1, &[rng.random::<f64>()]);
            let pred = predict(&p, &data, &model, &spec, &xs).unwrap();

            // joint covariance over (x, x*), conditioning done densely
            let mut all = DMatrix::zeros(7, 1);
            all.rows_mut(0, 6).copy_from(&x);
            all[(6, 0)] = xs[(0, 0)];
            let k_aug = match mode {
                DiscrepancyMode::Sgasp => spec.scaled_kernel(&x, &k.with_range(vec![1.0 / 3.0]).unwrap()).unwrap().cov_sym(&all).unwrap(),
                _ => corr_matrix_sym(&all, &k.with_range(vec![1.0 / 3.0]).unwrap()).unwrap(),
            };
            let cov = k_aug * 1.3 + DMatrix::identity(7, 7) * (1.3 * 0.04);
            let s11 = cov.view((0, 0), (6, 6)).into_owned();
            let s12 = cov.view((0, 6), (6, 1)).into_owned();
            let inv = s11.try_inverse().unwrap();
            let mean: DVector<f64> = DVector::from_fn(7, |i, _| 0.2 + all[(i, 0)]);
            let r = data.y() - mean.rows(0, 6);
            let m = mean[6] + (s12.transpose() * &inv * r)[0];
            let v = cov[(6, 6)] - (s12.transpose() * &inv * &s12)[0];
            assert!((pred.full_mean[0] - m).abs() < 1e-8);
            assert!((pred.variance[0] - v).abs() < 1e-8);
        }
    }
}
