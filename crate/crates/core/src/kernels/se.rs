use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal variance and per-dimension lengthscales of a squared exponential
/// ARD kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeArdParams {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SeArdParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let p = SeArdParams { variance, lengthscales };
        p.validate()?;
        Ok(p)
    }

    /// One-dimensional kernel with the given variance and lengthscale.
    pub fn scalar(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(variance, vec![lengthscale])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!("kernel variance must be positive, got {}", self.variance)));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("at least one lengthscale is required"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
        }
        Ok(())
    }

    pub(crate) fn scalar_lengthscale(&self) -> Result<f64> {
        self.validate()?;
        match self.lengthscales.as_slice() {
            [l] => Ok(*l),
            ls => Err(Error::invalid(format!(
                "expected a one-dimensional kernel, got {} lengthscales",
                ls.len()
            ))),
        }
    }
}

/// `sigma^2 exp(-0.5 * sum_j ((u_j - v_j) / l_j)^2)`
pub fn se_ard(u: &[f64], v: &[f64], p: &SeArdParams) -> Result<f64> {
    p.validate()?;
    if u.len() != v.len() || u.len() != p.lengthscales.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: inputs of length {} and {} with {} lengthscales",
            u.len(),
            v.len(),
            p.lengthscales.len()
        )));
    }
    let r2: f64 = u
        .iter()
        .zip(v)
        .zip(&p.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    Ok(p.variance * (-0.5 * r2).exp())
}
