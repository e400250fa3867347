use serde::{Deserialize, Serialize};

use super::censor::{apply_censoring, survival_toy_with_individual, CensoringScheme, DEFAULT_CAP_FACTOR};
use super::io::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::inference::{censored_posterior, fit, OptimizerConfig};
use crate::kernels::KernelKind;
use crate::model::{CensoringPrior, Mode, ModelConfig};

/// One individual of the survival toy is censored at each lower bound in
/// turn and its survival time is inferred by a variational fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorExperimentSpec {
    pub n: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub true_z: f64,
    pub true_x: f64,
    pub lower_grid: Vec<f64>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub optimizer: OptimizerConfig,
}

impl CensorExperimentSpec {
    /// Ten evenly spaced bounds from 0.7 to 1.7.
    pub fn default_grid() -> Vec<f64> {
        (0..10).map(|k| 0.7 + k as f64 / 9.0).collect()
    }

    pub fn new(seed: u64, true_x: f64) -> Self {
        CensorExperimentSpec {
            n: 100,
            noise_std: 0.1,
            seed,
            true_z: 1.0,
            true_x,
            lower_grid: Self::default_grid(),
            weibull_shape: 2.0,
            weibull_scale: 1.0,
            optimizer: OptimizerConfig { seed, ..Default::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower_grid.is_empty() {
            return Err(Error::invalid("the lower-bound grid is empty"));
        }
        if self.lower_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("lower bounds must be positive"));
        }
        if self.lower_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("lower bounds must be strictly ascending"));
        }
        self.optimizer.validate()
    }
}

/// Posterior of the censored individual under one lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorExperiment {
    pub schema_version: u32,
    pub spec: CensorExperimentSpec,
    /// Row of the censored individual.
    pub row: usize,
    pub scenarios: Vec<Scenario>,
}

pub fn censor_experiment(spec: &CensorExperimentSpec) -> Result<CensorExperiment> {
    spec.validate()?;
    let (ld, row) = survival_toy_with_individual(spec.n, spec.noise_std, spec.seed, spec.true_z, spec.true_x)?;
    let max_observed = (0..spec.n).filter(|i| *i != row).map(|i| ld.true_x[i]).fold(f64::NEG_INFINITY, f64::max);
    let prior = CensoringPrior::new(spec.weibull_shape, spec.weibull_scale, DEFAULT_CAP_FACTOR * max_observed)?;
    let mut cfg = ModelConfig::new(1, KernelKind::add_int());
    cfg.mode = Mode::Variational;
    cfg.censoring = Some(prior);
    let mut scenarios = Vec::with_capacity(spec.lower_grid.len());
    for &lower in &spec.lower_grid {
        let ds = apply_censoring(&ld, &CensoringScheme::FixedLower { rows: vec![row], lower })?;
        let result = fit(&ds, &cfg, &spec.optimizer)?;
        let post = censored_posterior(&result, &ds)?.entries.into_iter().next().expect("one censored entry");
        scenarios.push(Scenario {
            lower,
            upper: post.upper,
            mean: post.mean,
            std: post.std,
            q05: post.q05,
            q95: post.q95,
            converged: result.converged,
        });
    }
    Ok(CensorExperiment { schema_version: SCHEMA_VERSION, spec: spec.clone(), row, scenarios })
}
