use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gasp,
    Sgasp,
    Ogasp,
    L2,
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Matern52,
    PowExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Zero,
    Intercept,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimation {
    #[default]
    Mcmc,
    Mle,
    Both,
}

impl Estimation {
    pub fn mle(self) -> bool {
        matches!(self, Estimation::Mle | Estimation::Both)
    }

    pub fn mcmc(self) -> bool {
        matches!(self, Estimation::Mcmc | Estimation::Both)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ModelConfig {
    Builtin {
        name: String,
        #[serde(default)]
        theta_bounds: Option<Vec<(f64, f64)>>,
    },
    /// CSV with columns `x1..xp, t1..tq, y` holding computer-model runs.
    Emulator { design: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            samples: default_samples(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleConfig {
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            n_starts: default_starts(),
            seed: 0,
        }
    }
}

fn default_samples() -> usize {
    50_000
}

fn default_burn_in() -> usize {
    10_000
}

fn default_thin() -> usize {
    25
}

fn default_starts() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Field data, columns `x1..xp, y`.
    pub data: PathBuf,
    pub model: ModelConfig,
    /// Input domain; the bounding box of the data when absent.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub kernel: Family,
    /// Roughness of the power-exponential kernel.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub mean_basis: Basis,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub estimation: Estimation,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub mle: MleConfig,
    /// Prediction inputs, columns `x1..xp`.
    #[serde(default)]
    pub predict: Option<PathBuf>,
    /// Truth at the prediction inputs, columns `x1..xp, y_true`.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parse and validate; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data);
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.predict.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.truth.as_mut() {
            fix(p);
        }
        if let ModelConfig::Emulator { design } = &mut cfg.model {
            fix(design);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        if self.mcmc.samples == 0 || self.mcmc.thin == 0 {
            return Err(Failure::config("mcmc.samples and mcmc.thin must be positive"));
        }
        if self.mcmc.burn_in >= self.mcmc.samples {
            return Err(Failure::config("mcmc.burn_in must be smaller than mcmc.samples"));
        }
        if self.mle.n_starts == 0 {
            return Err(Failure::config("mle.n_starts must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Failure::config("lambda must be positive"));
            }
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu <= 2.0) {
                return Err(Failure::config("nu must lie in (0, 2]"));
            }
        }
        if self.truth.is_some() && self.predict.is_none() {
            return Err(Failure::config("a truth file needs prediction inputs"));
        }
        for (what, p) in [("data", Some(&self.data)), ("predict", self.predict.as_ref()), ("truth", self.truth.as_ref())] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Failure::data(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if let ModelConfig::Emulator { design } = &self.model {
            if !design.exists() {
                return Err(Failure::data(format!("emulator design {} does not exist", design.display())));
            }
        }
        Ok(())
    }
}
