//! One-dimensional correlation functions and their product-form composition.
//!
//! Inputs are stored one point per row. Distances are taken coordinate-wise,
//! `d_l = |x_al - x_bl|`, and the correlation between two points is the product
//! of the 1-D correlations over all coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Roughness used by the power-exponential family unless overridden.
pub const DEFAULT_ROUGHNESS: f64 = 1.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Matern52,
    PowerExponential,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::PowerExponential => "pow_exp",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern52" | "matern_5_2" | "matern" => Ok(KernelFamily::Matern52),
            "pow_exp" | "power_exponential" | "powexp" => Ok(KernelFamily::PowerExponential),
            other => Err(Error::Argument(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Correlation family plus per-dimension range (and roughness) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Range parameter per input dimension, in the units of that coordinate.
    pub range: Vec<f64>,
    /// Roughness per dimension; only read by the power-exponential family.
    pub roughness: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, range: Vec<f64>) -> Result<Self> {
        let roughness = vec![DEFAULT_ROUGHNESS; range.len()];
        let spec = KernelSpec {
            family,
            range,
            roughness,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern52(range: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Matern52, range)
    }

    pub fn pow_exp(range: Vec<f64>, nu: f64) -> Result<Self> {
        let roughness = vec![nu; range.len()];
        let spec = KernelSpec {
            family: KernelFamily::PowerExponential,
            range,
            roughness,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same family and roughness with new ranges.
    pub fn with_range(&self, range: Vec<f64>) -> Result<Self> {
        if range.len() != self.range.len() {
            return Err(Error::Shape(format!(
                "kernel has {} dimensions, got {} ranges",
                self.range.len(),
                range.len()
            )));
        }
        let spec = KernelSpec {
            family: self.family,
            range,
            roughness: self.roughness.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.range.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.roughness.len() != self.range.len() {
            return Err(Error::Shape(format!(
                "{} ranges but {} roughness values",
                self.range.len(),
                self.roughness.len()
            )));
        }
        if let Some(g) = self.range.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::Domain(format!("range must be positive, got {g}")));
        }
        if self.family == KernelFamily::PowerExponential {
            if let Some(nu) = self.roughness.iter().find(|nu| !(**nu > 0.0 && **nu <= 2.0)) {
                return Err(Error::Domain(format!("roughness must lie in (0, 2], got {nu}")));
            }
        }
        Ok(())
    }

    /// 1-D correlation of coordinate `l` at distance `d` (no argument checks).
    #[inline]
    pub(crate) fn corr_1d_unchecked(&self, l: usize, d: f64) -> f64 {
        match self.family {
            KernelFamily::Matern52 => matern52_unchecked(d, self.range[l]),
            KernelFamily::PowerExponential => pow_exp_unchecked(d, self.range[l], self.roughness[l]),
        }
    }
}

#[inline]
fn matern52_unchecked(d: f64, gamma: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let s = 5f64.sqrt() * d / gamma;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[inline]
fn pow_exp_unchecked(d: f64, gamma: f64, nu: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    (-(d / gamma).powf(nu)).exp()
}

fn check_distance(d: f64) -> Result<()> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Domain(format!("distance must be finite and nonnegative, got {d}")));
    }
    Ok(())
}

/// Matérn correlation with smoothness 5/2.
pub fn matern52(d: f64, gamma: f64) -> Result<f64> {
    check_distance(d)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("range must be positive, got {gamma}")));
    }
    Ok(matern52_unchecked(d, gamma))
}

/// Power-exponential correlation `exp(-(d/gamma)^nu)`.
pub fn pow_exp(d: f64, gamma: f64, nu: f64) -> Result<f64> {
    check_distance(d)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("range must be positive, got {gamma}")));
    }
    if !(nu > 0.0 && nu <= 2.0) {
        return Err(Error::Domain(format!("roughness must lie in (0, 2], got {nu}")));
    }
    Ok(pow_exp_unchecked(d, gamma, nu))
}

/// Product-form correlation between two input vectors.
pub fn product_corr(xa: &[f64], xb: &[f64], spec: &KernelSpec) -> Result<f64> {
    if xa.len() != spec.dim() || xb.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "inputs of length {} and {} for a {}-dimensional kernel",
            xa.len(),
            xb.len(),
            spec.dim()
        )));
    }
    let mut c = 1.0;
    for (l, (a, b)) in xa.iter().zip(xb).enumerate() {
        let d = (a - b).abs();
        check_distance(d)?;
        c *= spec.corr_1d_unchecked(l, d);
    }
    Ok(c)
}

/// Correlation matrix with entry `(i, j) = c(x1_i, x2_j)`.
pub fn corr_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if x1.ncols() != spec.dim() || x2.ncols() != spec.dim() {
        return Err(Error::Shape(format!(
            "inputs with {} and {} columns for a {}-dimensional kernel",
            x1.ncols(),
            x2.ncols(),
            spec.dim()
        )));
    }
    let (m, k) = (x1.nrows(), x2.nrows());
    let mut out = DMatrix::from_element(m, k, 1.0);
    for l in 0..spec.dim() {
        let a = x1.column(l);
        let b = x2.column(l);
        for j in 0..k {
            let bj = b[j];
            for i in 0..m {
                out[(i, j)] *= spec.corr_1d_unchecked(l, (a[i] - bj).abs());
            }
        }
    }
    Ok(out)
}

/// Symmetric correlation matrix of a design with itself (unit diagonal).
pub fn corr_matrix_sym(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if x.ncols() != spec.dim() {
        return Err(Error::Shape(format!(
            "inputs with {} columns for a {}-dimensional kernel",
            x.ncols(),
            spec.dim()
        )));
    }
    let n = x.nrows();
    let mut out = DMatrix::from_element(n, n, 1.0);
    for l in 0..spec.dim() {
        let a = x.column(l);
        for j in 0..n {
            for i in 0..j {
                out[(i, j)] *= spec.corr_1d_unchecked(l, (a[i] - a[j]).abs());
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

/// Correlations between one point and every row of `x`.
pub fn corr_vector(x: &DMatrix<f64>, point: &[f64], spec: &KernelSpec) -> Result<DVector<f64>> {
    if point.len() != spec.dim() || x.ncols() != spec.dim() {
        return Err(Error::Shape("point and design dimensions disagree with the kernel".into()));
    }
    let mut out = DVector::from_element(x.nrows(), 1.0);
    for (l, p) in point.iter().enumerate() {
        for i in 0..x.nrows() {
            out[i] *= spec.corr_1d_unchecked(l, (x[(i, l)] - p).abs());
        }
    }
    Ok(out)
}
