use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::censoring::CensoringPrior;
use crate::error::{Error, Result};
use crate::kernels::{AddIntParams, Component, IntegrationDomain, KernelKind};

/// Largest latent dimension accepted for exact GP fitting.
pub const MAX_LATENT_DIM: usize = 5;

/// Kernel variances and noise of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub bias_variance: f64,
    pub z_variance: f64,
    pub x_variance: f64,
    pub zx_variance: f64,
    pub noise_variance: f64,
}

impl FeatureParams {
    pub fn variance(&self, c: Component) -> f64 {
        match c {
            Component::Bias => self.bias_variance,
            Component::Z => self.z_variance,
            Component::X => self.x_variance,
            Component::Zx => self.zx_variance,
        }
    }

    pub fn set_variance(&mut self, c: Component, v: f64) {
        match c {
            Component::Bias => self.bias_variance = v,
            Component::Z => self.z_variance = v,
            Component::X => self.x_variance = v,
            Component::Zx => self.zx_variance = v,
        }
    }
}

/// Per-feature variances with lengthscales shared across features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub features: Vec<FeatureParams>,
    pub z_lengthscales: Vec<f64>,
    pub x_lengthscales: Vec<f64>,
    pub domain: IntegrationDomain,
}

impl ModelParams {
    pub fn kernel_params(&self, j: usize) -> AddIntParams {
        let f = &self.features[j];
        AddIntParams {
            bias_variance: f.bias_variance,
            z_variance: f.z_variance,
            x_variance: f.x_variance,
            zx_variance: f.zx_variance,
            z_lengthscales: self.z_lengthscales.clone(),
            x_lengthscales: self.x_lengthscales.clone(),
            domain: self.domain,
        }
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }

    /// Every variance, noise, and lengthscale is positive and finite.
    pub fn is_valid(&self) -> bool {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        self.features.iter().all(|f| {
            Component::ALL.iter().all(|c| f.variance(*c) >= 0.0 && f.variance(*c).is_finite())
                && pos(f.noise_variance)
        }) && self.z_lengthscales.iter().chain(&self.x_lengthscales).all(|l| pos(*l))
    }
}

/// Point estimates (MAP) or mean-field Gaussian posteriors (variational)
/// for the latent coordinates, plus truncated-normal posteriors for censored
/// covariates in the order of [`crate::model::Dataset::censored`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z_mean: DMatrix<f64>,
    pub z_log_std: DMatrix<f64>,
    pub x_cens_mean: Vec<f64>,
    pub x_cens_log_std: Vec<f64>,
}

impl LatentState {
    pub fn q(&self) -> usize {
        self.z_mean.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.z_mean.iter().chain(self.z_log_std.iter()).chain(&self.x_cens_mean).chain(&self.x_cens_log_std).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Map,
    Variational,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "map" => Ok(Mode::Map),
            "variational" | "vi" => Ok(Mode::Variational),
            other => Err(Error::invalid(format!("unknown mode '{other}' (expected map or variational)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Map => "map",
            Mode::Variational => "variational",
        })
    }
}

/// Hyperparameter priors and the noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Rate of the exponential (Gamma(1, rate)) prior on kernel variances.
    pub variance_rate: f64,
    pub lengthscale_log_mean: f64,
    pub lengthscale_log_std: f64,
    /// Noise variances are parameterized as `noise_floor + exp(theta)`.
    pub noise_floor: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { variance_rate: 1.0, lengthscale_log_mean: 0.0, lengthscale_log_std: 0.75, noise_floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub q: usize,
    pub mode: Mode,
    pub kernel: KernelKind,
    pub mc_samples: usize,
    pub priors: PriorConfig,
    pub domain: IntegrationDomain,
    /// Required whenever the data contain censored covariates.
    pub censoring: Option<CensoringPrior>,
}

impl ModelConfig {
    pub fn new(q: usize, kernel: KernelKind) -> Self {
        ModelConfig {
            q,
            mode: Mode::Map,
            kernel,
            mc_samples: 1,
            priors: PriorConfig::default(),
            domain: IntegrationDomain::default(),
            censoring: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.q > MAX_LATENT_DIM {
            return Err(Error::invalid(format!("latent dimension must be in 1..={MAX_LATENT_DIM}, got {}", self.q)));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        self.kernel.validate()?;
        let pr = &self.priors;
        if !(pr.variance_rate > 0.0 && pr.lengthscale_log_std > 0.0 && pr.noise_floor >= 0.0) {
            return Err(Error::invalid("prior settings must be positive"));
        }
        if let Some(c) = &self.censoring {
            c.validate()?;
        }
        Ok(())
    }

    /// Check that the configuration can be fitted to `ds`.
    pub fn validate_for(&self, ds: &super::Dataset) -> Result<()> {
        self.validate()?;
        if self.kernel.uses_covariates() && ds.c() == 0 {
            return Err(Error::invalid(format!("the {} kernel needs at least one covariate", self.kernel.name())));
        }
        if ds.has_censoring() {
            if self.mode != Mode::Variational {
                return Err(Error::invalid("censored covariates require variational mode"));
            }
            let prior = self
                .censoring
                .ok_or_else(|| Error::invalid("censored covariates require a Weibull prior (shape and scale)"))?;
            if !self.kernel.uses_covariates() {
                return Err(Error::invalid("censored covariates need a kernel that uses covariates"));
            }
            for e in ds.censored() {
                if !(e.lower < prior.lifespan_cap) {
                    return Err(Error::invalid(format!(
                        "censoring lower bound {} in row {} is not below the lifespan cap {}",
                        e.lower, e.row, prior.lifespan_cap
                    )));
                }
            }
        }
        Ok(())
    }
}
