use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::io::{matrix_rows, rows_matrix, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::gp::{component_posterior, tensor_grid, variance_fractions, ComponentCurve, GpPosterior, VarianceFractions};
use crate::inference::{censored_posterior, Diagnostics, FitResult, OptimizerConfig};
use crate::kernels::{Component, JointInputs, KernelKind};
use crate::model::{Affine, Dataset, ModelConfig, ModelParams};

/// Training inputs the fitted GPs condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    /// Standardized observations, row-major.
    pub y: Vec<Vec<f64>>,
    /// Covariates in kernel units; censored cells hold posterior means.
    pub x_kernel: Vec<Vec<f64>>,
    pub z_mean: Vec<Vec<f64>>,
}

/// Everything written to `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub feature_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub y_transform: Vec<Affine>,
    pub x_transform: Vec<Affine>,
    pub params: ModelParams,
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub restart: usize,
    pub restart_objectives: Vec<Option<f64>>,
    pub objective_trace: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub training: TrainingData,
}

impl FitSummary {
    pub fn new(result: &FitResult, ds: &Dataset) -> Result<Self> {
        let mut x = ds.x().clone();
        for (e, post) in ds.censored().iter().zip(censored_posterior(result, ds)?.entries) {
            x[(e.row, e.col)] = post.mean;
        }
        Ok(FitSummary {
            schema_version: SCHEMA_VERSION,
            config: result.config.clone(),
            optimizer: result.optimizer.clone(),
            feature_names: ds.feature_names().to_vec(),
            covariate_names: ds.covariate_names().to_vec(),
            y_transform: ds.y_transform().to_vec(),
            x_transform: ds.x_transform().to_vec(),
            params: result.params.clone(),
            converged: result.converged,
            iterations: result.objective_trace.len(),
            final_objective: result.final_objective(),
            restart: result.restart,
            restart_objectives: result.restart_objectives.clone(),
            objective_trace: result.objective_trace.clone(),
            diagnostics: result.diagnostics.clone(),
            training: TrainingData {
                y: matrix_rows(ds.y()),
                x_kernel: matrix_rows(&ds.to_kernel_units(&x)),
                z_mean: matrix_rows(&result.state.z_mean),
            },
        })
    }

    pub fn check_version(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "fit artifacts have schema version {} but this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        Ok(())
    }
}

/// A fitted model ready for posterior queries.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kind: KernelKind,
    pub params: ModelParams,
    pub inputs: JointInputs,
    pub y: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub x_transform: Vec<Affine>,
    pub y_transform: Vec<Affine>,
    pub domain: (f64, f64),
}

impl FittedModel {
    pub fn from_summary(s: &FitSummary) -> Result<Self> {
        s.check_version()?;
        let y = rows_matrix(&s.training.y)?;
        let inputs = JointInputs::new(rows_matrix(&s.training.z_mean)?, rows_matrix(&s.training.x_kernel)?)?;
        if y.nrows() != inputs.len() || y.ncols() != s.params.p() || s.feature_names.len() != y.ncols() {
            return Err(Error::invalid("fit artifacts are inconsistent"));
        }
        Ok(FittedModel {
            kind: s.config.kernel,
            params: s.params.clone(),
            inputs,
            y,
            feature_names: s.feature_names.clone(),
            x_transform: s.x_transform.clone(),
            y_transform: s.y_transform.clone(),
            domain: (s.params.domain.lower(), s.params.domain.upper()),
        })
    }

    pub fn from_fit(result: &FitResult, ds: &Dataset) -> Result<Self> {
        Self::from_summary(&FitSummary::new(result, ds)?)
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::invalid(format!("unknown feature '{name}' (known: {})", self.feature_names.join(", "))))
    }

    pub fn posterior(&self, j: usize) -> Result<GpPosterior> {
        let y = DVector::from_column_slice(self.y.column(j).as_slice());
        GpPosterior::new(self.inputs.clone(), &y, &self.params.kernel_params(j), &self.kind, self.params.features[j].noise_variance)
            .map_err(|e| e.for_feature(j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Posterior mean and variance of each component of one feature's latent
/// function on a `g x g` grid over the integration domain (standardized
/// feature units). `z` and `x` have one value per axis point, `zx` and
/// `total` are z-major surfaces (`iz * g + ix`), and `bias` is a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub schema_version: u32,
    pub feature: String,
    pub kernel: String,
    pub grid_size: usize,
    pub grid_z: Vec<f64>,
    /// Covariate axis in kernel units.
    pub grid_x: Vec<f64>,
    /// Covariate axis in the covariate's original units.
    pub grid_x_original: Vec<f64>,
    pub components: BTreeMap<String, MeanVar>,
    pub fractions: VarianceFractions,
    /// Posterior variances clamped at zero beyond round-off.
    pub clamped: usize,
}

pub fn decompose(model: &FittedModel, feature: &str, grid_size: usize) -> Result<Decomposition> {
    if model.inputs.q() != 1 || model.inputs.c() != 1 {
        return Err(Error::invalid(format!(
            "decomposition grids need one latent and one covariate dimension, got {} and {}",
            model.inputs.q(),
            model.inputs.c()
        )));
    }
    let j = model.feature_index(feature)?;
    let g = grid_size;
    let (axis, grid) = tensor_grid(model.domain.0, model.domain.1, g)?;
    let post = model.posterior(j)?;
    let p = model.params.kernel_params(j);
    let mut curves: Vec<ComponentCurve> = Vec::new();
    for c in model.kind.components().iter() {
        curves.push(component_posterior(&post, &grid, &p, &model.kind, Some(c))?);
    }
    let fractions = variance_fractions(&curves)?;
    let total = component_posterior(&post, &grid, &p, &model.kind, None)?;
    let mut clamped = total.clamped;
    let mut components = BTreeMap::new();
    for (c, curve) in model.kind.components().iter().zip(&curves) {
        clamped += curve.clamped;
        let pick: Vec<usize> = match c {
            Component::Bias => vec![0],
            Component::Z => (0..g).map(|iz| iz * g).collect(),
            Component::X => (0..g).collect(),
            Component::Zx => (0..g * g).collect(),
        };
        components.insert(
            c.name().to_string(),
            MeanVar {
                mean: pick.iter().map(|&k| curve.mean[k]).collect(),
                var: pick.iter().map(|&k| curve.variance[k]).collect(),
            },
        );
    }
    components.insert("total".into(), MeanVar { mean: total.mean, var: total.variance });
    let xt = model.x_transform[0];
    Ok(Decomposition {
        schema_version: SCHEMA_VERSION,
        feature: feature.to_string(),
        kernel: model.kind.name().to_string(),
        grid_size: g,
        grid_x_original: axis.iter().map(|v| xt.invert(*v)).collect(),
        grid_z: axis.clone(),
        grid_x: axis,
        components,
        fractions,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_survival_toy, to_json_string};
    use crate::inference::{fit, OptimizerConfig};

    fn small_fit() -> (FitResult, Dataset) {
        let ld = generate_survival_toy(30, 0.1, 1).unwrap();
        let cfg = ModelConfig::new(1, KernelKind::add_int());
        let opt = OptimizerConfig { max_iters: 200, warmup_iters: 50, patience: 50, n_restarts: 1, ..Default::default() };
        (fit(&ld.ds, &cfg, &opt).unwrap(), ld.ds)
    }

    #[test]
    fn decomposition_shapes_and_identities() {
        let (r, ds) = small_fit();
        let model = FittedModel::from_fit(&r, &ds).unwrap();
        let d = decompose(&model, "y1", 12).unwrap();
        assert_eq!(d.components["z"].mean.len(), 12);
        assert_eq!(d.components["x"].mean.len(), 12);
        assert_eq!(d.components["zx"].mean.len(), 144);
        assert_eq!(d.components["total"].mean.len(), 144);
        let f = d.fractions;
        assert!((f.z + f.x + f.zx - 1.0).abs() < 1e-6);
        let b = d.components["bias"].mean[0];
        for iz in 0..12 {
            for ix in 0..12 {
                let k = iz * 12 + ix;
                let sum = b + d.components["z"].mean[iz] + d.components["x"].mean[ix] + d.components["zx"].mean[k];
                assert!((sum - d.components["total"].mean[k]).abs() < 1e-8);
            }
        }
        assert!(matches!(decompose(&model, "nope", 12), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn summary_round_trips_through_json() {
        let (r, ds) = small_fit();
        let s = FitSummary::new(&r, &ds).unwrap();
        let back: FitSummary = serde_json::from_str(&to_json_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        let mut old = s.clone();
        old.schema_version = 0;
        assert!(FittedModel::from_summary(&old).is_err());
    }

    #[test]
    fn vanishing_interaction_gives_flat_surface() {
        let (r, ds) = small_fit();
        let mut model = FittedModel::from_fit(&r, &ds).unwrap();
        model.params.features[3].zx_variance = 1e-12;
        let d = decompose(&model, "y4", 10).unwrap();
        let total = &d.components["total"].mean;
        let m = total.iter().sum::<f64>() / total.len() as f64;
        let sd = (total.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / total.len() as f64).sqrt();
        let zx_max = d.components["zx"].mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(zx_max < 1e-3 * sd);
    }
}
