//! Browser bindings for the demo page in `www/`. Every export returns a JSON
//! string so the page needs nothing beyond `JSON.parse`.

use cgplvm::data::{decompose, FittedModel, GeneratorKind, GeneratorSpec};
use cgplvm::inference::{evaluate_recovery, fit, OptimizerConfig};
use cgplvm::kernels::{mean_zero_se, IntegrationDomain, KernelKind};
use cgplvm::model::ModelConfig;
use cgplvm::truncnorm::TruncatedNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Serialize)]
struct KernelCurve {
    t: Vec<f64>,
    se: Vec<f64>,
    mean_zero: Vec<f64>,
}

/// `k(x, t)` for the plain and the mean-zero SE kernel (unit variance) as
/// `t` sweeps the domain `[lower, upper]`.
#[wasm_bindgen]
pub fn kernel_curve(x: f64, lengthscale: f64, lower: f64, upper: f64, points: usize) -> Result<String, JsValue> {
    let d = IntegrationDomain::new(lower, upper).map_err(js_err)?;
    let t = linspace(lower, upper, points.max(2));
    let se = t.iter().map(|t| (-0.5 * ((x - t) / lengthscale).powi(2)).exp()).collect();
    let mean_zero = t.iter().map(|t| mean_zero_se(x, *t, &d, lengthscale)).collect::<Result<_, _>>().map_err(js_err)?;
    to_json(&KernelCurve { t, se, mean_zero })
}

#[derive(Serialize)]
struct FeatureFractions {
    feature: String,
    z: f64,
    x: f64,
    zx: f64,
}

#[derive(Serialize)]
struct DemoFit {
    true_z: Vec<f64>,
    fitted_z: Vec<f64>,
    x: Vec<f64>,
    recovery: f64,
    features: Vec<FeatureFractions>,
    iterations: usize,
}

/// Generates a toy dataset, fits the ADD+INT model and reports latent
/// recovery plus the variance decomposition of every feature.
#[wasm_bindgen]
pub fn fit_demo(kind: &str, n: usize, seed: u64, iters: usize) -> Result<String, JsValue> {
    let kind: GeneratorKind = kind.parse().map_err(js_err)?;
    if kind.is_tabular() {
        return Err(js_err("the demo supports survival_toy, rings and pinwheel"));
    }
    let ld = GeneratorSpec::new(kind, n, 0.1, seed).generate().map_err(js_err)?;
    let cfg = ModelConfig::new(1, KernelKind::add_int());
    let opt = OptimizerConfig {
        max_iters: iters,
        warmup_iters: 200.min(iters / 3),
        n_restarts: 1,
        seed,
        ..Default::default()
    };
    let r = fit(&ld.ds, &cfg, &opt).map_err(js_err)?;
    let fitted_z: Vec<f64> = r.state.z_mean.column(0).iter().copied().collect();
    let recovery = evaluate_recovery(&fitted_z, &ld.true_z).map_err(js_err)?;
    let model = FittedModel::from_fit(&r, &ld.ds).map_err(js_err)?;
    let features = model
        .feature_names
        .iter()
        .map(|f| {
            decompose(&model, f, 20).map(|d| FeatureFractions {
                feature: f.clone(),
                z: d.fractions.z,
                x: d.fractions.x,
                zx: d.fractions.zx,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(js_err)?;
    to_json(&DemoFit {
        true_z: ld.true_z,
        fitted_z,
        x: ld.true_x,
        recovery,
        features,
        iterations: r.objective_trace.len(),
    })
}

#[derive(Serialize)]
struct Posterior {
    mean: f64,
    sd: f64,
    q05: f64,
    q50: f64,
    q95: f64,
    t: Vec<f64>,
    pdf: Vec<f64>,
}

/// Normal `N(mu, sigma^2)` truncated to `[lower, upper]`: moments,
/// quantiles and the density on a grid. `upper` may be infinite, as for a
/// right-censored value.
#[wasm_bindgen]
pub fn truncated_posterior(mu: f64, sigma: f64, lower: f64, upper: f64, points: usize) -> Result<String, JsValue> {
    let tn = TruncatedNormal::new(mu, sigma, lower, upper).map_err(js_err)?;
    let (mean, var) = tn.moments();
    let (lo, hi) = tn.support_window(6.0);
    let t = linspace(lo, hi, points.max(2));
    let pdf = t.iter().map(|v| tn.ln_pdf(*v).exp()).collect();
    to_json(&Posterior {
        mean,
        sd: var.max(0.0).sqrt(),
        q05: tn.quantile(0.05),
        q50: tn.quantile(0.5),
        q95: tn.quantile(0.95),
        t,
        pdf,
    })
}
