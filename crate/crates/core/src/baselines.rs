//! Two-step comparison methods (L2 calibration through a GaSP surrogate of
//! reality, least squares followed by a residual GaSP) and maximin Latin
//! hypercube designs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::{predict, CalibParams, ComputerModel, Domain, FieldDataset, MeanBasis, PredictiveResult};
use crate::error::{Error, Result};
use crate::inference::{mle_fit, MleOptions};
use crate::kernel::KernelSpec;
use crate::optim::{lhd_starts, multi_start, random_lhd, LbfgsOptions};
use crate::sgasp::{midpoint_grid, DiscrepancySpec};

/// A GaSP with constant mean fitted by maximum likelihood to `(x, y)` alone.
#[derive(Debug, Clone)]
pub struct GaspFit {
    pub data: FieldDataset,
    pub spec: DiscrepancySpec,
    pub params: CalibParams,
    pub loglik: f64,
}

impl GaspFit {
    pub fn fit(data: &FieldDataset, mle: &MleOptions) -> Result<Self> {
        let spec = DiscrepancySpec::gasp(KernelSpec::matern52(vec![1.0; data.p_x()])?).with_mean_basis(MeanBasis::intercept());
        let res = mle_fit(data, &ComputerModel::zero(), &spec, mle)?;
        Ok(GaspFit {
            data: data.clone(),
            spec,
            params: res.best_params,
            loglik: res.best_loglik,
        })
    }

    pub fn predict(&self, xstar: &DMatrix<f64>) -> Result<PredictiveResult> {
        predict(&self.params, &self.data, &ComputerModel::zero(), &self.spec, xstar)
    }
}

#[derive(Debug, Clone)]
pub struct L2Options {
    /// Quadrature nodes; `None` means 1000 midpoints for one input and 10^4
    /// seeded uniform points otherwise.
    pub quad_points: Option<usize>,
    pub n_starts: usize,
    pub seed: u64,
    pub mle: MleOptions,
}

impl Default for L2Options {
    fn default() -> Self {
        L2Options {
            quad_points: None,
            n_starts: 20,
            seed: 0,
            mle: MleOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct L2Result {
    pub theta_hat: Vec<f64>,
    pub l2_loss_at_opt: f64,
    pub surrogate: GaspFit,
}

impl L2Result {
    /// Calibrated model alone, with the surrogate of reality as the full mean.
    pub fn predict(&self, model: &ComputerModel, xstar: &DMatrix<f64>) -> Result<PredictiveResult> {
        let mut p = self.surrogate.predict(xstar)?;
        p.model_only_mean = model.eval_rows(xstar, &self.theta_hat)?;
        Ok(p)
    }
}

/// Quadrature nodes and equal weight used for integrals over `domain`.
pub fn l2_nodes(domain: &Domain, quad_points: Option<usize>, seed: u64) -> Result<(DMatrix<f64>, f64)> {
    if domain.dim() == 1 {
        midpoint_grid(domain, quad_points.unwrap_or(1000))
    } else {
        let m = quad_points.unwrap_or(10_000);
        if m == 0 {
            return Err(Error::Argument("need at least one quadrature point".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = domain.dim();
        let mut nodes = DMatrix::zeros(m, p);
        for i in 0..m {
            for l in 0..p {
                let (a, b) = domain.bounds(l);
                nodes[(i, l)] = a + (b - a) * rng.random::<f64>();
            }
        }
        Ok((nodes, domain.volume() / m as f64))
    }
}

/// Quadrature approximation of `int (target(x) - f^M(x, theta))^2 dx`.
pub fn l2_loss(model: &ComputerModel, theta: &[f64], nodes: &DMatrix<f64>, weight: f64, target: &DVector<f64>) -> Result<f64> {
    let f = model.eval_rows(nodes, theta)?;
    Ok(weight * (target - f).norm_squared())
}

fn theta_search<F>(model: &ComputerModel, objective: F, n_starts: usize, seed: u64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if model.p_theta() == 0 {
        return Err(Error::Argument("model has no calibration parameters".into()));
    }
    if n_starts == 0 {
        return Err(Error::Argument("n_starts must be positive".into()));
    }
    let bounds = model.theta_bounds().intervals().to_vec();
    let starts = lhd_starts(&bounds, n_starts, seed);
    let opts = LbfgsOptions {
        tol: 1e-12,
        grad_step: 1e-6,
        ..Default::default()
    };
    let (best, outcomes) = multi_start(&objective, &starts, &bounds, &opts);
    let best = best.ok_or_else(|| {
        let why: Vec<String> = outcomes
            .iter()
            .map(|o| match &o.result {
                Ok(m) => format!("start {}: value {}", o.index, m.value),
                Err(e) => format!("start {}: {e}", o.index),
            })
            .collect();
        Error::Optimization(format!("parameter search failed ({})", why.join("; ")))
    })?;
    let m = outcomes[best].result.as_ref().expect("best start succeeded");
    Ok((m.x.clone(), m.value))
}

/// Two-step L2 calibration: fit a GaSP surrogate of reality, then minimize
/// the quadrature L2 distance between the surrogate and the model.
pub fn l2_calibrate(data: &FieldDataset, model: &ComputerModel, opts: &L2Options) -> Result<L2Result> {
    let mle = MleOptions {
        seed: opts.seed,
        ..opts.mle.clone()
    };
    let surrogate = GaspFit::fit(data, &mle)?;
    let (nodes, weight) = l2_nodes(data.domain(), opts.quad_points, opts.seed)?;
    let target = surrogate.predict(&nodes)?.full_mean;
    let objective = |t: &[f64]| l2_loss(model, t, &nodes, weight, &target).unwrap_or(f64::INFINITY);
    let (theta_hat, loss) = theta_search(model, objective, opts.n_starts, opts.seed)?;
    Ok(L2Result {
        theta_hat,
        l2_loss_at_opt: loss.max(0.0),
        surrogate,
    })
}

#[derive(Debug, Clone)]
pub struct LsResult {
    pub theta_hat: Vec<f64>,
    pub sse: f64,
    /// GaSP fitted to `y - f^M(x, theta_hat)`.
    pub residual_fit: GaspFit,
}

impl LsResult {
    pub fn predict(&self, model: &ComputerModel, xstar: &DMatrix<f64>) -> Result<PredictiveResult> {
        let mut p = self.residual_fit.predict(xstar)?;
        let f = model.eval_rows(xstar, &self.theta_hat)?;
        p.full_mean += &f;
        p.model_only_mean = f;
        Ok(p)
    }
}

#[derive(Debug, Clone)]
pub struct LsOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub mle: MleOptions,
}

impl Default for LsOptions {
    fn default() -> Self {
        LsOptions {
            n_starts: 20,
            seed: 0,
            mle: MleOptions::default(),
        }
    }
}

/// Least-squares calibration followed by a GaSP on the residuals.
pub fn ls_calibrate(data: &FieldDataset, model: &ComputerModel, opts: &LsOptions) -> Result<LsResult> {
    let sse = |t: &[f64]| match model.eval_rows(data.x(), t) {
        Ok(f) => (data.y() - f).norm_squared(),
        Err(_) => f64::INFINITY,
    };
    let (theta_hat, value) = theta_search(model, sse, opts.n_starts, opts.seed)?;
    let resid = data.y() - model.eval_rows(data.x(), &theta_hat)?;
    let mle = MleOptions {
        seed: opts.seed,
        ..opts.mle.clone()
    };
    let residual_fit = GaspFit::fit(&data.with_y(resid)?, &mle)?;
    Ok(LsResult {
        theta_hat,
        sse: value,
        residual_fit,
    })
}

fn min_distance_stats(pts: &[Vec<f64>]) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut count = 0;
    for i in 0..pts.len() {
        for j in 0..i {
            let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best {
                best = d;
                count = 1;
            } else if d == best {
                count += 1;
            }
        }
    }
    (best.sqrt(), count)
}

/// Minimum pairwise Euclidean distance of a design given as rows.
pub fn min_distance(design: &DMatrix<f64>) -> f64 {
    let pts: Vec<Vec<f64>> = (0..design.nrows()).map(|i| design.row(i).iter().copied().collect()).collect();
    min_distance_stats(&pts).0
}

/// Latin hypercube in `[0,1]^p` improved by pairwise swaps within a column;
/// a swap is kept when it raises the minimum pairwise distance, or keeps it
/// and reduces the number of pairs attaining it.
pub fn maximin_lhd(n: usize, p: usize, iterations: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 || p == 0 {
        return Err(Error::Argument(format!("need n >= 2 and p >= 1, got n = {n}, p = {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = random_lhd(n, p, &mut rng);
    let (mut best, mut count) = min_distance_stats(&pts);
    for _ in 0..iterations {
        let l = rng.random_range(0..p);
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (pts[i][l], pts[j][l]);
        pts[i][l] = b;
        pts[j][l] = a;
        let (d, c) = min_distance_stats(&pts);
        if d > best || (d == best && c < count) {
            best = d;
            count = c;
        } else {
            pts[i][l] = a;
            pts[j][l] = b;
        }
    }
    Ok(DMatrix::from_fn(n, p, |i, l| pts[i][l]))
}

/// Random Latin hypercube with the same seed as [`maximin_lhd`], before any swaps.
pub fn random_lhd_design(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    maximin_lhd(n, p, 0, seed)
}
