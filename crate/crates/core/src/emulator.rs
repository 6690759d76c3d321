//! GaSP emulator of an expensive computer model, fit on design runs.
//!
//! The mean coefficients and the variance are integrated out under the usual
//! `1 / sigma2` prior, the inverse ranges are set to their marginal posterior
//! mode, and predictions follow a Student-t distribution with `D - q`
//! degrees of freedom.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::calib::{ComputerModel, Domain, LogDensity, MeanBasis, ModelKind};
use crate::covcore::Factor;
use crate::error::{Error, Result};
use crate::kernel::{corr_matrix, corr_matrix_sym, KernelFamily, KernelSpec};
use crate::optim::{lhd_starts, multi_start, LbfgsOptions};

/// Prior on the emulator's inverse range parameters.
#[derive(Clone, Default)]
pub enum RangePrior {
    /// `(sum C_l psi_l)^a exp(-b sum C_l psi_l)` with `a = 1/2 - p`, `b = 1`,
    /// `C_l = |range_l| D^{-1/p}`.
    #[default]
    JointlyRobust,
    /// Log density in `psi`.
    Custom(LogDensity),
}

impl fmt::Debug for RangePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangePrior::JointlyRobust => write!(f, "JointlyRobust"),
            RangePrior::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmulatorOptions {
    pub family: KernelFamily,
    pub mean_basis: MeanBasis,
    pub prior: RangePrior,
    pub n_starts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsOptions,
}

impl Default for EmulatorOptions {
    fn default() -> Self {
        EmulatorOptions {
            family: KernelFamily::Matern52,
            mean_basis: MeanBasis::intercept(),
            prior: RangePrior::JointlyRobust,
            n_starts: 10,
            seed: 0,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmulatorModel {
    design: DMatrix<f64>,
    outputs: DVector<f64>,
    p_x: usize,
    mean_basis: MeanBasis,
    kernel: KernelSpec,
    beta: DVector<f64>,
    sigma2: f64,
    factor: Factor,
    // R^{-1}(f - H beta)
    alpha: DVector<f64>,
    // Cholesky factor of H^T R^{-1} H
    gls: Factor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorPrediction {
    pub mean: DVector<f64>,
    /// Scale of the Student-t predictive, squared.
    pub variance: DVector<f64>,
    pub dof: usize,
}

// Everything the marginal posterior needs at one set of ranges.
struct Profile {
    factor: Factor,
    gls: Factor,
    beta: DVector<f64>,
    s2: f64,
    log_marginal: f64,
}

fn profile(design: &DMatrix<f64>, f: &DVector<f64>, h: &DMatrix<f64>, kernel: &KernelSpec) -> Result<Profile> {
    let r = corr_matrix_sym(design, kernel)?;
    let factor = Factor::new(&r)?;
    let hw = factor.whiten_mat(h);
    let fw = factor.whiten(f);
    let gls = Factor::new(&hw.tr_mul(&hw))
        .map_err(|_| Error::Argument("emulator mean basis matrix is rank deficient".into()))?;
    let beta = gls.solve(&hw.tr_mul(&fw));
    let resid = fw - &hw * &beta;
    let s2 = resid.norm_squared().max(f64::MIN_POSITIVE);
    let dof = (design.nrows() - h.ncols()) as f64;
    let log_marginal = -0.5 * factor.log_det() - 0.5 * gls.log_det() - 0.5 * dof * s2.ln();
    Ok(Profile {
        factor,
        gls,
        beta,
        s2,
        log_marginal,
    })
}

fn canonical_order(design: &DMatrix<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..design.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for j in 0..design.ncols() {
            match design[(a, j)].total_cmp(&design[(b, j)]) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

/// Fit the emulator on `D` runs. The first `p_x` design columns are the
/// variable inputs, the rest the calibration parameters.
pub fn emulator_fit(design: &DMatrix<f64>, outputs: &DVector<f64>, p_x: usize, opts: &EmulatorOptions) -> Result<EmulatorModel> {
    let d = design.nrows();
    let p = design.ncols();
    let q = opts.mean_basis.len();
    if outputs.len() != d {
        return Err(Error::Shape(format!("{d} design rows but {} outputs", outputs.len())));
    }
    if p == 0 || p_x > p {
        return Err(Error::Shape(format!("{p} design columns cannot hold {p_x} inputs")));
    }
    if d <= q + 2 {
        return Err(Error::Argument(format!("need more than {} design runs, have {d}", q + 2)));
    }
    if design.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in emulator design".into()));
    }
    if opts.n_starts == 0 {
        return Err(Error::Argument("n_starts must be positive".into()));
    }

    // Sorting the runs makes the fit independent of their order.
    let order = canonical_order(design);
    let design = DMatrix::from_fn(d, p, |i, j| design[(order[i], j)]);
    let outputs = DVector::from_fn(d, |i, _| outputs[order[i]]);
    for i in 1..d {
        if design.row(i) == design.row(i - 1) {
            return Err(Error::Argument("emulator design has duplicated rows".into()));
        }
    }
    let h = opts.mean_basis.matrix(&design)?;
    if h.ncols() > 0 && (h.tr_mul(&h)).rank(1e-12 * h.norm_squared().max(1.0)) < q {
        return Err(Error::Argument("emulator mean basis matrix is rank deficient".into()));
    }

    let widths: Vec<f64> = (0..p)
        .map(|j| {
            let col = design.column(j);
            let w = col.max() - col.min();
            if w > 0.0 {
                w
            } else {
                1.0
            }
        })
        .collect();
    let scale = (d as f64).powf(-1.0 / p as f64);
    let jr_c: Vec<f64> = widths.iter().map(|w| w * scale).collect();
    let jr_a = 0.5 - p as f64;
    let base = KernelSpec::new(opts.family, vec![1.0; p])?;

    let log_post = |lpsi: &[f64]| -> Result<f64> {
        let psi: Vec<f64> = lpsi.iter().map(|v| v.exp()).collect();
        let kernel = base.with_range(psi.iter().map(|v| 1.0 / v).collect())?;
        let prof = profile(&design, &outputs, &h, &kernel)?;
        let prior = match &opts.prior {
            RangePrior::JointlyRobust => {
                let t: f64 = jr_c.iter().zip(&psi).map(|(c, v)| c * v).sum();
                jr_a * t.ln() - t
            }
            RangePrior::Custom(f) => f(&psi),
        };
        Ok(prof.log_marginal + prior + lpsi.iter().sum::<f64>())
    };
    let objective = |v: &[f64]| match log_post(v) {
        Ok(lp) if lp.is_finite() => -lp,
        _ => f64::INFINITY,
    };
    let bounds: Vec<(f64, f64)> = widths.iter().map(|w| ((0.01 / w).ln(), (1000.0 / w).ln())).collect();
    let starts = lhd_starts(&bounds, opts.n_starts, opts.seed);
    let (best, outcomes) = multi_start(&objective, &starts, &bounds, &opts.lbfgs);
    let best = best.ok_or_else(|| {
        let why: Vec<String> = outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| format!("start {}: {e}", o.index)))
            .collect();
        Error::numerical(format!("emulator range optimization failed: {}", why.join("; ")))
    })?;
    let lpsi = &outcomes[best].result.as_ref().expect("best start succeeded").x;
    let kernel = base.with_range(lpsi.iter().map(|v| (-v).exp()).collect())?;
    let prof = profile(&design, &outputs, &h, &kernel)?;
    let sigma2 = prof.s2 / (d - q) as f64;
    let resid = &outputs - &h * &prof.beta;
    let alpha = prof.factor.solve(&resid);
    Ok(EmulatorModel {
        design,
        outputs,
        p_x,
        mean_basis: opts.mean_basis.clone(),
        kernel,
        beta: prof.beta,
        sigma2,
        factor: prof.factor,
        alpha,
        gls: prof.gls,
    })
}

impl EmulatorModel {
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn p_x(&self) -> usize {
        self.p_x
    }

    pub fn p_theta(&self) -> usize {
        self.design.ncols() - self.p_x
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dof(&self) -> usize {
        self.design.nrows() - self.mean_basis.len()
    }

    /// Student-t predictive at the rows of `z` (each row `(x, theta)`).
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<EmulatorPrediction> {
        if z.ncols() != self.design.ncols() {
            return Err(Error::Shape(format!(
                "prediction rows have {} columns, design has {}",
                z.ncols(),
                self.design.ncols()
            )));
        }
        let r = corr_matrix(&self.design, z, &self.kernel)?;
        let h = self.mean_basis.matrix(z)?;
        let mut mean = r.tr_mul(&self.alpha);
        if !self.beta.is_empty() {
            mean += &h * &self.beta;
        }
        let w = self.factor.whiten_mat(&r);
        let hd = self.factor.whiten_mat(&self.mean_basis.matrix(&self.design)?);
        let variance = DVector::from_fn(z.nrows(), |j, _| {
            let wj = w.column(j);
            let mut v = 1.0 - wj.norm_squared();
            if !self.beta.is_empty() {
                // h* - H^T R^{-1} r*
                let u = h.row(j).transpose() - hd.tr_mul(&wj);
                v += self.gls.quad_form(&u);
            }
            (self.sigma2 * v).max(0.0)
        });
        Ok(EmulatorPrediction {
            mean,
            variance,
            dof: self.dof(),
        })
    }

    pub fn predict_point(&self, x: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
        let z = DMatrix::from_iterator(1, x.len() + theta.len(), x.iter().chain(theta).copied());
        let p = self.predict(&z)?;
        Ok((p.mean[0], p.variance[0]))
    }

    /// Box spanned by the design in the calibration-parameter columns.
    pub fn theta_box(&self) -> Result<Domain> {
        Domain::new(
            (self.p_x..self.design.ncols())
                .map(|j| (self.design.column(j).min(), self.design.column(j).max()))
                .collect(),
        )
    }
}

/// Batch prediction with the variable inputs and parameters given separately.
pub fn emulator_predict(model: &EmulatorModel, xstar: &DMatrix<f64>, thetastar: &DMatrix<f64>) -> Result<EmulatorPrediction> {
    if xstar.nrows() != thetastar.nrows() || xstar.ncols() != model.p_x() || thetastar.ncols() != model.p_theta() {
        return Err(Error::Shape("prediction inputs do not match the emulator dimensions".into()));
    }
    let mut z = DMatrix::zeros(xstar.nrows(), model.design.ncols());
    z.columns_mut(0, model.p_x()).copy_from(xstar);
    z.columns_mut(model.p_x(), model.p_theta()).copy_from(thetastar);
    model.predict(&z)
}

/// How the wrapped emulator answers a model evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmulatorOutput {
    #[default]
    Mean,
    /// A Student-t draw, seeded by the evaluation point so repeated calls agree.
    Draw { seed: u64 },
}

/// Wrap the emulator as a computer model with parameters in the design's
/// parameter box.
pub fn as_computer_model(model: &EmulatorModel) -> Result<ComputerModel> {
    as_computer_model_with(model, EmulatorOutput::Mean)
}

pub fn as_computer_model_with(model: &EmulatorModel, output: EmulatorOutput) -> Result<ComputerModel> {
    let bounds = model.theta_box()?;
    let m = Arc::new(model.clone());
    let eval = move |x: &[f64], theta: &[f64]| -> f64 {
        let Ok((mean, var)) = m.predict_point(x, theta) else {
            return f64::NAN;
        };
        match output {
            EmulatorOutput::Mean => mean,
            EmulatorOutput::Draw { seed } => {
                let mut key = seed;
                for v in x.iter().chain(theta) {
                    key = key.rotate_left(17) ^ v.to_bits().wrapping_mul(0x9e37_79b9_7f4a_7c15);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let t: f64 = StudentT::new(m.dof() as f64).map(|d| d.sample(&mut rng)).unwrap_or(0.0);
                mean + var.sqrt() * t
            }
        }
    };
    Ok(ComputerModel::with_kind(Arc::new(eval), bounds, ModelKind::Emulated))
}
