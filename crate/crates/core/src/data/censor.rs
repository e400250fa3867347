use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generators::{generate_survival_toy, survival_toy_features, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{CensoredEntry, Dataset};

/// Lifespan cap as a multiple of the largest observed covariate.
pub const DEFAULT_CAP_FACTOR: f64 = 3.0;

/// Which covariate entries (column 0) become censored and at what bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CensoringScheme {
    /// The listed rows are known only to exceed `lower`.
    FixedLower { rows: Vec<usize>, lower: f64 },
    /// A random `fraction` of rows is censored at `x * (1 - offset)`.
    Fraction { fraction: f64, offset: f64, seed: u64 },
}

/// Mark covariate entries as censored. Censored cells store their lower
/// bound as the working value; the upper bound is the lifespan cap,
/// `DEFAULT_CAP_FACTOR` times the largest covariate value left observed.
pub fn apply_censoring(ld: &LabeledDataset, scheme: &CensoringScheme) -> Result<Dataset> {
    let n = ld.ds.n();
    if ld.true_x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("censoring needs a positive covariate"));
    }
    let bounds: Vec<(usize, f64)> = match scheme {
        CensoringScheme::FixedLower { rows, lower } => {
            if let Some(r) = rows.iter().find(|r| **r >= n) {
                return Err(Error::invalid(format!("row {r} is out of range for {n} samples")));
            }
            if !(*lower > 0.0 && lower.is_finite()) {
                return Err(Error::invalid(format!("lower bound must be positive, got {lower}")));
            }
            rows.iter().map(|&r| (r, *lower)).collect()
        }
        CensoringScheme::Fraction { fraction, offset, seed } => {
            if !(0.0..=1.0).contains(fraction) || !(0.0..1.0).contains(offset) {
                return Err(Error::invalid("fraction must lie in [0, 1] and offset in [0, 1)"));
            }
            let k = (fraction * n as f64).round() as usize;
            let mut rows = sample(&mut ChaCha8Rng::seed_from_u64(*seed), n, k).into_vec();
            rows.sort_unstable();
            rows.into_iter().map(|r| (r, ld.true_x[r] * (1.0 - offset))).collect()
        }
    };
    let mut x = nalgebra::DMatrix::from_column_slice(n, 1, &ld.true_x);
    if bounds.is_empty() {
        return ld.ds.with_censoring(vec![], x);
    }
    let censored_rows: std::collections::HashSet<usize> = bounds.iter().map(|b| b.0).collect();
    let max_obs = (0..n).filter(|i| !censored_rows.contains(i)).map(|i| ld.true_x[i]).fold(f64::NEG_INFINITY, f64::max);
    if !max_obs.is_finite() {
        return Err(Error::invalid("at least one covariate value must stay observed"));
    }
    let cap = DEFAULT_CAP_FACTOR * max_obs;
    let mut entries = Vec::with_capacity(bounds.len());
    for (row, lower) in bounds {
        if !(lower < cap) {
            return Err(Error::invalid(format!("censoring bound {lower} in row {row} is not below the lifespan cap {cap}")));
        }
        x[(row, 0)] = lower;
        entries.push(CensoredEntry { row, col: 0, lower, upper: cap });
    }
    ld.ds.with_censoring(entries, x)
}

/// Survival-toy data in which one individual has latent value `true_z`
/// and survival time `true_x`. The row whose generated latent value is
/// closest to `true_z` is moved there, keeping its noise draw. Returns the
/// data and that row.
pub fn survival_toy_with_individual(
    n: usize,
    noise_std: f64,
    seed: u64,
    true_z: f64,
    true_x: f64,
) -> Result<(LabeledDataset, usize)> {
    if !(true_x > 0.0 && true_x.is_finite()) {
        return Err(Error::invalid(format!("true covariate value must be positive, got {true_x}")));
    }
    if !true_z.is_finite() {
        return Err(Error::invalid(format!("true latent value must be finite, got {true_z}")));
    }
    let mut ld = generate_survival_toy(n, noise_std, seed)?;
    let row = (0..n)
        .min_by(|&a, &b| (ld.true_z[a] - true_z).abs().total_cmp(&(ld.true_z[b] - true_z).abs()))
        .expect("non-empty");
    let old = survival_toy_features(ld.true_z[row], ld.true_x[row]);
    let new = survival_toy_features(true_z, true_x);
    for j in 0..4 {
        ld.y_raw[(row, j)] += new[j] - old[j];
    }
    ld.true_z[row] = true_z;
    ld.true_x[row] = true_x;
    let x = nalgebra::DMatrix::from_column_slice(n, 1, &ld.true_x);
    ld.ds = Dataset::new(ld.y_raw.clone(), x, vec![], ld.ds.feature_names().to_vec(), ld.ds.covariate_names().to_vec())?;
    Ok((ld, row))
}
