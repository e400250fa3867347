use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for the gradient-ascent loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Relative improvement of the smoothed objective that resets patience.
    pub convergence_rtol: f64,
    /// Iterations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub n_restarts: usize,
    /// Iterations during which kernel variances are held at their initial values.
    pub warmup_iters: usize,
    /// Window of the moving average used for convergence and restart selection.
    pub smoothing_window: usize,
    /// Restarts are compared after this many iterations and only the best
    /// continues. 0 runs every restart to completion.
    pub screening_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.01,
            max_iters: 3000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            convergence_rtol: 1e-5,
            patience: 200,
            seed: 0,
            n_restarts: 3,
            warmup_iters: 200,
            smoothing_window: 25,
            screening_iters: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 || self.patience == 0 || self.n_restarts == 0 || self.smoothing_window == 0 {
            return Err(Error::invalid("max_iters, patience, n_restarts and smoothing_window must be positive"));
        }
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in (0, 1)"));
        }
        if !(self.adam_eps > 0.0) || !(self.convergence_rtol > 0.0) {
            return Err(Error::invalid("adam_eps and convergence_rtol must be positive"));
        }
        Ok(())
    }
}

/// Adam in ascent form. Entries with `frozen[i]` set are left untouched and
/// keep zero moments.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(dim: usize, cfg: &OptimizerConfig) -> Self {
        Adam {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr: cfg.step_size,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], frozen: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..theta.len() {
            if frozen[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g;
            theta[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climbs_a_concave_quadratic() {
        let cfg = OptimizerConfig { step_size: 0.1, ..Default::default() };
        let mut adam = Adam::new(2, &cfg);
        let mut th = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![-2.0 * (th[0] - 1.0), -2.0 * th[1]];
            adam.step(&mut th, &g, &[false, true]);
        }
        assert!((th[0] - 1.0).abs() < 1e-3);
        assert_eq!(th[1], -2.0);
    }

    #[test]
    fn rejects_bad_betas() {
        let cfg = OptimizerConfig { adam_beta1: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
