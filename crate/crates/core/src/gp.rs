//! Exact GP regression: marginal likelihood, its gradients, predictive
//! moments, and posteriors of individual additive components.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram, kernel_diag, AddIntParams, Component, ComponentMask, JointInputs, KernelKind};
use crate::linalg::SpdFactor;

/// Predictive variances below this are round-off and are clamped to zero.
pub const VARIANCE_CLAMP_TOL: f64 = -1e-10;

/// Everything the likelihood and its gradients need for one feature.
#[derive(Debug)]
pub(crate) struct LmlTerms {
    pub value: f64,
    pub alpha: DVector<f64>,
    pub factor: SpdFactor,
}

impl LmlTerms {
    /// `W = 0.5 (alpha alpha^T - A^{-1})`, so that `d lml = sum(W .* dA)`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let mut w = self.factor.inverse();
        w.ger(-1.0, &self.alpha, &self.alpha, 1.0);
        w * -0.5
    }
}

fn covariance(k: &DMatrix<f64>, y: &DVector<f64>, noise: f64) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() || k.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "kernel matrix is {}x{} but y has length {}",
            k.nrows(),
            k.ncols(),
            y.len()
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be non-negative, got {noise}")));
    }
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += noise;
    }
    Ok(a)
}

pub(crate) fn lml_terms(y: &DVector<f64>, k: &DMatrix<f64>, noise: f64) -> Result<LmlTerms> {
    let a = covariance(k, y, noise)?;
    let factor = SpdFactor::new(&a)?;
    let alpha = factor.solve(y);
    let n = y.len() as f64;
    let value = -0.5 * y.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n * (2.0 * PI).ln();
    Ok(LmlTerms { value, alpha, factor })
}

/// `log N(y | 0, K + noise I)`.
pub fn log_marginal_likelihood(y: &DVector<f64>, k: &DMatrix<f64>, noise: f64) -> Result<f64> {
    Ok(lml_terms(y, k, noise)?.value)
}

/// Gradient of [`log_marginal_likelihood`] along each `dK` in `dk_list`:
/// `0.5 tr((alpha alpha^T - A^{-1}) dK)`.
pub fn lml_gradient(y: &DVector<f64>, k: &DMatrix<f64>, noise: f64, dk_list: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let terms = lml_terms(y, k, noise)?;
    let w = terms.weight_matrix();
    dk_list
        .iter()
        .map(|dk| {
            if dk.shape() != w.shape() {
                return Err(Error::invalid("gradient matrix has the wrong shape"));
            }
            Ok(w.component_mul(dk).sum())
        })
        .collect()
}

/// Posterior of a GP fitted to one feature.
#[derive(Debug)]
pub struct GpPosterior {
    pub alpha: DVector<f64>,
    factor: SpdFactor,
    pub train_inputs: JointInputs,
    pub noise_variance: f64,
}

impl GpPosterior {
    pub fn new(inputs: JointInputs, y: &DVector<f64>, p: &AddIntParams, kind: &KernelKind, noise: f64) -> Result<Self> {
        let k = gram(&inputs, p, kind)?;
        let terms = lml_terms(y, &k, noise)?;
        Ok(GpPosterior { alpha: terms.alpha, factor: terms.factor, train_inputs: inputs, noise_variance: noise })
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub fn chol(&self) -> DMatrix<f64> {
        self.factor.lower()
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    fn check(&self, test: &JointInputs) -> Result<()> {
        if test.q() != self.train_inputs.q() || test.c() != self.train_inputs.c() {
            return Err(Error::invalid(format!(
                "test inputs have dimensions ({}, {}) but the training inputs have ({}, {})",
                test.q(),
                test.c(),
                self.train_inputs.q(),
                self.train_inputs.c()
            )));
        }
        Ok(())
    }

    /// Mean `K_c*^T alpha` and variance `k_c** - K_c*^T A^{-1} K_c*` of the
    /// masked part of the latent function. Returns the number of clamped
    /// variances as the third element.
    fn masked_moments(
        &self,
        test: &JointInputs,
        p: &AddIntParams,
        kind: &KernelKind,
        mask: ComponentMask,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        self.check(test)?;
        let ks = cross_gram(&self.train_inputs, test, p, kind, mask)?;
        let mean = (ks.transpose() * &self.alpha).as_slice().to_vec();
        let v = self.factor.solve_lower(&ks);
        let prior = kernel_diag(test, p, kind, mask)?;
        let mut clamped = 0;
        let var = prior
            .iter()
            .enumerate()
            .map(|(j, kss)| {
                let s = kss - v.column(j).norm_squared();
                if s < 0.0 {
                    if s < VARIANCE_CLAMP_TOL {
                        clamped += 1;
                    }
                    0.0
                } else {
                    s
                }
            })
            .collect();
        Ok((mean, var, clamped))
    }
}

/// Predictive mean and variance (including observation noise) at `test`.
pub fn posterior_predictive(
    post: &GpPosterior,
    test: &JointInputs,
    p: &AddIntParams,
    kind: &KernelKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mean, var, _) = post.masked_moments(test, p, kind, kind.components())?;
    Ok((mean, var.into_iter().map(|v| v + post.noise_variance).collect()))
}

/// Which part of the latent function a curve describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveComponent {
    Bias,
    Z,
    X,
    Zx,
    Total,
}

impl From<Component> for CurveComponent {
    fn from(c: Component) -> Self {
        match c {
            Component::Bias => CurveComponent::Bias,
            Component::Z => CurveComponent::Z,
            Component::X => CurveComponent::X,
            Component::Zx => CurveComponent::Zx,
        }
    }
}

/// Posterior mean and variance of one component on a set of inputs.
#[derive(Debug, Clone)]
pub struct ComponentCurve {
    pub grid: JointInputs,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub component: CurveComponent,
    /// Number of variances that were negative beyond round-off and clamped.
    pub clamped: usize,
}

/// Posterior of one additive component (`Some(c)`) or of the whole latent
/// function without noise (`None`).
pub fn component_posterior(
    post: &GpPosterior,
    test: &JointInputs,
    p: &AddIntParams,
    kind: &KernelKind,
    component: Option<Component>,
) -> Result<ComponentCurve> {
    let (mask, label) = match component {
        Some(c) => (ComponentMask::only(c), c.into()),
        None => (kind.components(), CurveComponent::Total),
    };
    let (mean, variance, clamped) = post.masked_moments(test, p, kind, mask)?;
    Ok(ComponentCurve { grid: test.clone(), mean, variance, component: label, clamped })
}

/// Shares of grid variance per component. The bias is constant, so it is
/// reported as an offset rather than a share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFractions {
    pub z: f64,
    pub x: f64,
    pub zx: f64,
    pub bias_offset: f64,
}

impl VarianceFractions {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Bias => 0.0,
            Component::Z => self.z,
            Component::X => self.x,
            Component::Zx => self.zx,
        }
    }
}

fn grid_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Empirical variance of each component mean over the shared grid,
/// normalized to sum to one. Curves for missing components count as zero.
pub fn variance_fractions(curves: &[ComponentCurve]) -> Result<VarianceFractions> {
    let n = curves.first().map(|c| c.mean.len()).unwrap_or(0);
    if n == 0 || curves.iter().any(|c| c.mean.len() != n) {
        return Err(Error::invalid("component curves must share a non-empty grid"));
    }
    let var_of = |which: CurveComponent| {
        curves.iter().filter(|c| c.component == which).map(|c| grid_variance(&c.mean)).sum::<f64>()
    };
    let (z, x, zx) = (var_of(CurveComponent::Z), var_of(CurveComponent::X), var_of(CurveComponent::Zx));
    let total = z + x + zx;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateDecomposition);
    }
    let bias_offset = curves
        .iter()
        .find(|c| c.component == CurveComponent::Bias)
        .map(|c| c.mean.iter().sum::<f64>() / n as f64)
        .unwrap_or(0.0);
    Ok(VarianceFractions { z: z / total, x: x / total, zx: zx / total, bias_offset })
}

/// `g x g` tensor grid over the domain for one latent and one covariate
/// dimension, z-major: point `iz * g + ix` is `(grid[iz], grid[ix])`.
pub fn tensor_grid(lower: f64, upper: f64, g: usize) -> Result<(Vec<f64>, JointInputs)> {
    if g < 2 {
        return Err(Error::invalid("grid size must be at least 2"));
    }
    let axis: Vec<f64> = (0..g).map(|i| lower + (upper - lower) * i as f64 / (g - 1) as f64).collect();
    let z = DMatrix::from_fn(g * g, 1, |k, _| axis[k / g]);
    let x = DMatrix::from_fn(g * g, 1, |k, _| axis[k % g]);
    Ok((axis, JointInputs::new(z, x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::IntegrationDomain;
    use crate::testutil::central_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> AddIntParams {
        AddIntParams {
            bias_variance: 0.4,
            z_variance: 1.1,
            x_variance: 0.6,
            zx_variance: 0.5,
            z_lengthscales: vec![0.8],
            x_lengthscales: vec![1.3],
            domain: IntegrationDomain::default(),
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> JointInputs {
        JointInputs::new(
            DMatrix::from_fn(n, 1, |_, _| rng.random_range(-2.5..2.5)),
            DMatrix::from_fn(n, 1, |_, _| rng.random_range(-2.5..2.5)),
        )
        .unwrap()
    }

    #[test]
    fn lml_of_single_point() {
        let v = log_marginal_likelihood(&DVector::from_element(1, 0.0), &DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        assert!((v + 0.5 * (4.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn lml_matches_explicit_two_by_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let y = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let (a, b, c): (f64, f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(-0.4..0.4), rng.random_range(0.5..2.0));
            let noise = rng.random_range(0.01..0.5);
            let k = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let (s11, s12, s22) = (a + noise, b, c + noise);
            let det = s11 * s22 - s12 * s12;
            let quad = (s22 * y[0] * y[0] - 2.0 * s12 * y[0] * y[1] + s11 * y[1] * y[1]) / det;
            let oracle = -0.5 * quad - 0.5 * det.ln() - (2.0 * PI).ln();
            let v = log_marginal_likelihood(&y, &k, noise).unwrap();
            assert!((v - oracle).abs() < 1e-10 * oracle.abs());
        }
    }

    #[test]
    fn diagonal_shift_equals_noise_increase() {
        let y = DVector::from_vec(vec![0.3, -1.2, 0.5]);
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.0]);
        let shifted = &k + DMatrix::identity(3, 3) * 0.25;
        let a = log_marginal_likelihood(&y, &shifted, 0.1).unwrap();
        let b = log_marginal_likelihood(&y, &k, 0.35).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn lml_gradient_identities_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let k = &b * b.transpose();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let noise = 0.3;
        let zero = DMatrix::zeros(n, n);
        let ident = DMatrix::identity(n, n);
        let sym = {
            let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            &c + c.transpose()
        };
        let g = lml_gradient(&y, &k, noise, &[zero, ident, sym.clone()]).unwrap();
        assert_eq!(g[0], 0.0);
        let noise_fd = central_diff(|h| log_marginal_likelihood(&y, &k, noise + h).unwrap(), 1e-6);
        assert!((g[1] - noise_fd).abs() < 1e-4 * noise_fd.abs());
        let dir_fd = central_diff(|h| log_marginal_likelihood(&y, &(&k + &sym * h), noise).unwrap(), 1e-6);
        assert!((g[2] - dir_fd).abs() < 1e-4 * dir_fd.abs());
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let err = log_marginal_likelihood(&DVector::zeros(2), &k, 0.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        assert!(err.for_feature(3).to_string().contains("feature 3"));
    }

    #[test]
    fn cholesky_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = params();
        let kind = KernelKind::add_int();
        let inputs = random_inputs(&mut rng, 12);
        let y = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let post = GpPosterior::new(inputs.clone(), &y, &p, &kind, 0.05).unwrap();
        let mut a = gram(&inputs, &p, &kind).unwrap();
        let knorm = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        for i in 0..12 {
            a[(i, i)] += 0.05 + post.jitter();
        }
        let l = post.chol();
        let err = (&l * l.transpose() - &a).amax();
        assert!(err < 1e-8 * knorm);
        assert!((&a * &post.alpha - &y).amax() < 1e-8);
    }

    #[test]
    fn interpolates_training_points_when_noise_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = params();
        let kind = KernelKind::Add;
        let inputs = random_inputs(&mut rng, 4);
        let y = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let post = GpPosterior::new(inputs.clone(), &y, &p, &kind, 1e-10).unwrap();
        let (mean, _) = posterior_predictive(&post, &inputs, &p, &kind).unwrap();
        for i in 0..4 {
            assert!((mean[i] - y[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = params();
        let kind = KernelKind::Int;
        let inputs = random_inputs(&mut rng, 5);
        let y = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let post = GpPosterior::new(inputs, &y, &p, &kind, 0.1).unwrap();
        let far = JointInputs::from_points(&[(vec![200.0], vec![-300.0])]).unwrap();
        let (mean, var) = posterior_predictive(&post, &far, &p, &kind).unwrap();
        assert!(mean[0].abs() < 1e-12);
        assert!((var[0] - (p.zx_variance + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn predictive_matches_explicit_three_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = params();
        let kind = KernelKind::add_int();
        let inputs = random_inputs(&mut rng, 3);
        let test = random_inputs(&mut rng, 2);
        let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let noise = 0.2;
        let post = GpPosterior::new(inputs.clone(), &y, &p, &kind, noise).unwrap();
        let (mean, var) = posterior_predictive(&post, &test, &p, &kind).unwrap();

        // cofactor inverse of the 3x3 covariance
        let a = gram(&inputs, &p, &kind).unwrap() + DMatrix::identity(3, 3) * noise;
        let c = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&r| r != i).collect();
            let s: Vec<usize> = (0..3).filter(|&s| s != j).collect();
            a[(r[0], s[0])] * a[(r[1], s[1])] - a[(r[0], s[1])] * a[(r[1], s[0])]
        };
        let det = a[(0, 0)] * c(0, 0) - a[(0, 1)] * c(0, 1) + a[(0, 2)] * c(0, 2);
        let inv = DMatrix::from_fn(3, 3, |i, j| {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * c(j, i) / det
        });
        for t in 0..2 {
            let pt = (test.z[(t, 0)], test.x[(t, 0)]);
            let ks = DVector::from_fn(3, |i, _| {
                crate::kernels::kernel((&[inputs.z[(i, 0)]], &[inputs.x[(i, 0)]]), (&[pt.0], &[pt.1]), &p, &kind).unwrap()
            });
            let kss = crate::kernels::kernel((&[pt.0], &[pt.1]), (&[pt.0], &[pt.1]), &p, &kind).unwrap();
            let m = (ks.transpose() * &inv * &y)[0];
            let v = kss - (ks.transpose() * &inv * &ks)[0] + noise;
            assert!((mean[t] - m).abs() < 1e-8 * m.abs().max(1e-3));
            assert!((var[t] - v).abs() < 1e-8 * v.abs());
        }
    }

    #[test]
    fn component_means_add_up_and_respect_zero_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = params();
        let kind = KernelKind::add_int();
        let inputs = random_inputs(&mut rng, 10);
        let y = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let test = random_inputs(&mut rng, 7);
        let post = GpPosterior::new(inputs.clone(), &y, &p, &kind, 0.1).unwrap();
        let total = component_posterior(&post, &test, &p, &kind, None).unwrap();
        let (pred_mean, pred_var) = posterior_predictive(&post, &test, &p, &kind).unwrap();
        let mut sum = vec![0.0; 7];
        for c in Component::ALL {
            let curve = component_posterior(&post, &test, &p, &kind, Some(c)).unwrap();
            for (s, m) in sum.iter_mut().zip(&curve.mean) {
                *s += m;
            }
        }
        for t in 0..7 {
            assert!((sum[t] - total.mean[t]).abs() < 1e-8);
            assert!((pred_mean[t] - total.mean[t]).abs() < 1e-12);
            let prior = kernel_diag(&test, &p, &kind, kind.components()).unwrap()[t] + 0.1;
            assert!(pred_var[t] <= prior + 1e-8);
        }

        p.zx_variance = 0.0;
        let post = GpPosterior::new(inputs, &y, &p, &kind, 0.1).unwrap();
        let zx = component_posterior(&post, &test, &p, &kind, Some(Component::Zx)).unwrap();
        assert!(zx.mean.iter().all(|m| *m == 0.0));
    }

    fn curve(component: CurveComponent, mean: Vec<f64>) -> ComponentCurve {
        let n = mean.len();
        ComponentCurve {
            grid: JointInputs::new(DMatrix::zeros(n, 1), DMatrix::zeros(n, 1)).unwrap(),
            variance: vec![0.0; n],
            mean,
            component,
            clamped: 0,
        }
    }

    #[test]
    fn fractions_of_pure_latent_signal() {
        let f = variance_fractions(&[
            curve(CurveComponent::Bias, vec![0.5; 4]),
            curve(CurveComponent::Z, vec![1.0, -1.0, 2.0, 0.0]),
            curve(CurveComponent::X, vec![0.0; 4]),
            curve(CurveComponent::Zx, vec![0.0; 4]),
        ])
        .unwrap();
        assert_eq!((f.z, f.x, f.zx), (1.0, 0.0, 0.0));
        assert_eq!(f.bias_offset, 0.5);
        assert!(matches!(
            variance_fractions(&[curve(CurveComponent::Z, vec![0.0; 3])]),
            Err(Error::DegenerateDecomposition)
        ));
    }

    #[test]
    fn component_variances_add_up_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = params();
        let kind = KernelKind::add_int();
        let inputs = random_inputs(&mut rng, 30);
        let y = DVector::from_fn(30, |i, _| {
            let (z, x) = (inputs.z[(i, 0)], inputs.x[(i, 0)]);
            z.sin() + 0.5 * x + 0.3 * z * x + 0.05 * rng.random_range(-1.0..1.0)
        });
        let post = GpPosterior::new(inputs, &y, &p, &kind, 0.05).unwrap();
        let (_, grid) = tensor_grid(-3.0, 3.0, 40).unwrap();
        let mut curves = Vec::new();
        for c in Component::ALL {
            curves.push(component_posterior(&post, &grid, &p, &kind, Some(c)).unwrap());
        }
        let total = component_posterior(&post, &grid, &p, &kind, None).unwrap();
        let parts: f64 = curves[1..].iter().map(|c| grid_variance(&c.mean)).sum();
        let whole = grid_variance(&total.mean);
        assert!((whole - parts).abs() < 0.05 * whole, "{whole} vs {parts}");
        let f = variance_fractions(&curves).unwrap();
        assert!((f.z + f.x + f.zx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_grid_is_z_major() {
        let (axis, g) = tensor_grid(-1.0, 1.0, 3).unwrap();
        assert_eq!(axis, vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.len(), 9);
        assert_eq!((g.z[(5, 0)], g.x[(5, 0)]), (0.0, 1.0));
    }
}
