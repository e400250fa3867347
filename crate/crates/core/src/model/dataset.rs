use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Affine map `v -> (v - shift) / scale` with its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    /// Zero mean, unit (population) standard deviation for `values`.
    pub fn standardizing(values: &[f64]) -> Option<Affine> {
        let n = values.len() as f64;
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        // a spread at round-off level of the values counts as constant
        let tol = 1e-12 * values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        if !(sd > tol) || !sd.is_finite() {
            return None;
        }
        Some(Affine { shift: mean, scale: sd })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }

    pub fn invert(&self, s: f64) -> f64 {
        s * self.scale + self.shift
    }
}

/// A covariate entry known only to lie in `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredEntry {
    pub row: usize,
    pub col: usize,
    pub lower: f64,
    /// `f64::INFINITY` when there is no stated upper bound.
    pub upper: f64,
}

/// Status of one covariate entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensorRecord {
    Observed,
    Censored { lower: f64, upper: f64 },
}

/// Observations `Y` (standardized per feature) with covariates `X` and
/// censoring metadata.
///
/// `X` is kept in its original units because the censoring prior is stated
/// in those units; [`Dataset::x_kernel`] applies the recorded per-column
/// standardization for use as kernel inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DMatrix<f64>,
    y_transform: Vec<Affine>,
    x: DMatrix<f64>,
    x_transform: Vec<Affine>,
    censored: Vec<CensoredEntry>,
    feature_names: Vec<String>,
    covariate_names: Vec<String>,
}

fn check_names(names: &[String], expected: usize, what: &str) -> Result<()> {
    if names.len() != expected {
        return Err(Error::invalid(format!("expected {expected} {what} names, got {}", names.len())));
    }
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} name '{n}'")));
        }
    }
    Ok(())
}

/// Validate censoring metadata, write working values, and standardize
/// covariates using observed entries only.
fn prepare_covariates(
    x_raw: DMatrix<f64>,
    mut censored: Vec<CensoredEntry>,
    covariate_names: &[String],
) -> Result<(DMatrix<f64>, Vec<Affine>, Vec<CensoredEntry>)> {
    let n = x_raw.nrows();
    censored.sort_by_key(|e| (e.row, e.col));
    let mut is_censored = DMatrix::from_element(n, x_raw.ncols(), false);
    for e in &censored {
        if e.row >= n || e.col >= x_raw.ncols() {
            return Err(Error::invalid(format!("censored entry ({}, {}) is out of range", e.row, e.col)));
        }
        if is_censored[(e.row, e.col)] {
            return Err(Error::invalid(format!("entry ({}, {}) is censored twice", e.row, e.col)));
        }
        if !e.lower.is_finite() || e.upper.is_nan() || !(e.lower < e.upper) {
            return Err(Error::invalid(format!(
                "censored entry ({}, {}) needs lower < upper, got [{}, {}]",
                e.row, e.col, e.lower, e.upper
            )));
        }
        is_censored[(e.row, e.col)] = true;
    }

    let mut x = x_raw;
    for e in &censored {
        x[(e.row, e.col)] = e.lower;
    }
    for c in 0..x.ncols() {
        for i in 0..n {
            if !is_censored[(i, c)] && !x[(i, c)].is_finite() {
                return Err(Error::invalid(format!(
                    "covariate '{}' has a missing or non-finite value in row {i}",
                    covariate_names[c]
                )));
            }
        }
    }

    let mut x_transform = Vec::with_capacity(x.ncols());
    for c in 0..x.ncols() {
        // censored working values are lower bounds, not observations
        let observed: Vec<f64> = (0..n).filter(|&i| !is_censored[(i, c)]).map(|i| x[(i, c)]).collect();
        let basis = if observed.len() >= 2 { observed } else { x.column(c).as_slice().to_vec() };
        let t = Affine::standardizing(&basis)
            .ok_or_else(|| Error::ZeroVariance(format!("covariate '{}' is constant", covariate_names[c])))?;
        x_transform.push(t);
    }

    Ok((x, x_transform, censored))
}

impl Dataset {
    /// Build from raw observations and covariates. Censored covariate cells
    /// are overwritten with their lower bound as the working value.
    pub fn new(
        y_raw: DMatrix<f64>,
        x_raw: DMatrix<f64>,
        censored: Vec<CensoredEntry>,
        feature_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = y_raw.shape();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 rows, got {n}")));
        }
        if p == 0 {
            return Err(Error::invalid("need at least one feature column"));
        }
        if x_raw.nrows() != n {
            return Err(Error::invalid(format!("Y has {n} rows but X has {}", x_raw.nrows())));
        }
        check_names(&feature_names, p, "feature")?;
        check_names(&covariate_names, x_raw.ncols(), "covariate")?;
        if let Some(j) = (0..p).find(|&j| y_raw.column(j).iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("feature '{}' has missing or non-finite values", feature_names[j])));
        }

        let (x, x_transform, censored) = prepare_covariates(x_raw, censored, &covariate_names)?;

        let mut y = y_raw;
        let mut y_transform = Vec::with_capacity(p);
        for j in 0..p {
            let t = Affine::standardizing(y.column(j).as_slice())
                .ok_or_else(|| Error::ZeroVariance(format!("feature '{}' is constant", feature_names[j])))?;
            y.column_mut(j).iter_mut().for_each(|v| *v = t.apply(*v));
            y_transform.push(t);
        }

        Ok(Dataset { y, y_transform, x, x_transform, censored, feature_names, covariate_names })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn c(&self) -> usize {
        self.x.ncols()
    }

    /// Standardized observations.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn y_transform(&self) -> &[Affine] {
        &self.y_transform
    }

    /// Covariates in original units (censored cells hold working values).
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn x_transform(&self) -> &[Affine] {
        &self.x_transform
    }

    /// Covariates mapped to kernel units.
    pub fn x_kernel(&self) -> DMatrix<f64> {
        self.to_kernel_units(&self.x)
    }

    pub fn to_kernel_units(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| self.x_transform[c].apply(x[(i, c)]))
    }

    pub fn censored(&self) -> &[CensoredEntry] {
        &self.censored
    }

    pub fn has_censoring(&self) -> bool {
        !self.censored.is_empty()
    }

    pub fn record(&self, row: usize, col: usize) -> CensorRecord {
        match self.censored.iter().find(|e| e.row == row && e.col == col) {
            Some(e) => CensorRecord::Censored { lower: e.lower, upper: e.upper },
            None => CensorRecord::Observed,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Largest observed (uncensored) value of a covariate, falling back to
    /// censoring lower bounds when nothing is observed.
    pub fn max_observed(&self, col: usize) -> f64 {
        let censored: HashSet<usize> = self.censored.iter().filter(|e| e.col == col).map(|e| e.row).collect();
        let obs = (0..self.n()).filter(|i| !censored.contains(i)).map(|i| self.x[(i, col)]);
        let m = obs.fold(f64::NEG_INFINITY, f64::max);
        if m.is_finite() {
            m
        } else {
            self.censored.iter().filter(|e| e.col == col).map(|e| e.lower).fold(f64::NEG_INFINITY, f64::max)
        }
    }

    /// Copy with a different set of censored entries (same raw values).
    /// Same observations with new covariates and censoring metadata.
    pub fn with_censoring(&self, censored: Vec<CensoredEntry>, x_raw: DMatrix<f64>) -> Result<Self> {
        if x_raw.nrows() != self.n() || x_raw.ncols() != self.covariate_names.len() {
            return Err(Error::invalid("covariate matrix shape does not match the dataset"));
        }
        let (x, x_transform, censored) = prepare_covariates(x_raw, censored, &self.covariate_names)?;
        Ok(Dataset { x, x_transform, censored, ..self.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, k: usize) -> Vec<String> {
        (0..k).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn standardizes_features_and_records_covariate_transform() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 60.0]);
        let x = DMatrix::from_column_slice(3, 1, &[0.5, 1.5, 2.5]);
        let ds = Dataset::new(y, x, vec![], names("y", 2), names("x", 1)).unwrap();
        for j in 0..2 {
            let col = ds.y().column(j);
            assert!(col.mean().abs() < 1e-14);
            assert!((col.variance() - 1.0).abs() < 1e-12);
        }
        let xk = ds.x_kernel();
        assert!((xk[(0, 0)] + xk[(2, 0)]).abs() < 1e-14);
        let t = ds.x_transform()[0];
        assert!((t.invert(t.apply(1.234567)) - 1.234567).abs() < 1e-12);
    }

    #[test]
    fn rejects_constant_feature_by_name() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let x = DMatrix::zeros(3, 0);
        let err = Dataset::new(y, x, vec![], vec!["a".into(), "flat".into()], vec![]).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn censored_cells_start_at_lower_bound_and_are_excluded_from_scaling() {
        let y = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 99.0]);
        let cens = vec![CensoredEntry { row: 3, col: 0, lower: 1.2, upper: f64::INFINITY }];
        let ds = Dataset::new(y, x, cens, names("y", 1), names("x", 1)).unwrap();
        assert_eq!(ds.x()[(3, 0)], 1.2);
        assert!((ds.x_transform()[0].shift - 2.0).abs() < 1e-14);
        assert_eq!(ds.max_observed(0), 3.0);
        assert!(matches!(ds.record(3, 0), CensorRecord::Censored { .. }));
        assert_eq!(ds.record(0, 0), CensorRecord::Observed);
    }

    #[test]
    fn rejects_inverted_bounds_and_single_row() {
        let y = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let bad = vec![CensoredEntry { row: 0, col: 0, lower: 2.0, upper: 1.0 }];
        assert!(Dataset::new(y.clone(), x.clone(), bad, names("y", 1), names("x", 1)).is_err());
        let one = DMatrix::from_column_slice(1, 1, &[0.0]);
        assert!(Dataset::new(one.clone(), one, vec![], names("y", 1), names("x", 1)).is_err());
    }
}
