use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use crate::error::{Error, Result};
use crate::model::{censored_posterior as entry_posterior, Dataset, Mode};

/// Posterior of one censored covariate entry, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredPosteriorEntry {
    pub row: usize,
    pub col: usize,
    pub lower: f64,
    /// Upper bound after applying the lifespan cap.
    pub upper: f64,
    /// Location and scale of the truncated normal.
    pub mu: f64,
    pub sigma: f64,
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredPosteriorSummary {
    pub entries: Vec<CensoredPosteriorEntry>,
}

/// Moments and 5% / 95% quantiles of every censored entry's posterior.
pub fn censored_posterior(result: &FitResult, ds: &Dataset) -> Result<CensoredPosteriorSummary> {
    if !ds.has_censoring() {
        return Ok(CensoredPosteriorSummary { entries: vec![] });
    }
    if result.config.mode != Mode::Variational {
        return Err(Error::invalid("censored posteriors need a variational fit"));
    }
    let prior = result.config.censoring.as_ref().ok_or_else(|| Error::invalid("fit has no censoring prior"))?;
    if result.state.x_cens_mean.len() != ds.censored().len() {
        return Err(Error::invalid("fit does not match the dataset's censored entries"));
    }
    let entries = ds
        .censored()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let tn = entry_posterior(ds, &result.state, prior, k)?;
            let (mean, var) = tn.moments();
            Ok(CensoredPosteriorEntry {
                row: e.row,
                col: e.col,
                lower: tn.lower,
                upper: tn.upper,
                mu: tn.mu,
                sigma: tn.sigma,
                mean,
                std: var.max(0.0).sqrt(),
                q05: tn.quantile(0.05),
                q95: tn.quantile(0.95),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CensoredPosteriorSummary { entries })
}

/// Absolute Pearson correlation between fitted and true latent coordinates.
pub fn evaluate_recovery(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::invalid(format!("length mismatch: {} fitted vs {} true values", fitted.len(), truth.len())));
    }
    if fitted.len() < 3 {
        return Err(Error::invalid("need at least 3 values to correlate"));
    }
    let n = fitted.len() as f64;
    let (ma, mb) = (fitted.iter().sum::<f64>() / n, truth.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in fitted.iter().zip(truth) {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if !(saa > 0.0) {
        return Err(Error::ZeroVariance("fitted coordinates are constant".into()));
    }
    if !(sbb > 0.0) {
        return Err(Error::ZeroVariance("true coordinates are constant".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).abs().min(1.0))
}
