use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::censoring::{kl_q_censored, CensoringPrior};
use super::dataset::Dataset;
use super::params::{LatentState, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::gp::lml_terms;
use crate::kernels::{Component, JointInputs, KernelKind, UnitGrams};
use crate::parallel::{chunks, map_chunks};
use crate::special::LN_SQRT_2PI;
use crate::truncnorm::TruncatedNormal;

/// Upper bound on the number of feature chunks evaluated concurrently.
const MAX_FEATURE_CHUNKS: usize = 16;

/// Summed log marginal likelihood over features with its gradients.
#[derive(Debug, Clone)]
pub struct LikelihoodGrad {
    pub value: f64,
    /// `d/dZ` (N x Q).
    pub d_z: DMatrix<f64>,
    /// `d/dX` in kernel units (N x C).
    pub d_x: DMatrix<f64>,
    /// Per feature, `d/d log(variance)` in [`Component::ALL`] order.
    pub d_log_variance: Vec<[f64; 4]>,
    /// Per feature, `d/d noise_variance`.
    pub d_noise: Vec<f64>,
    pub d_log_z_lengthscales: Vec<f64>,
    pub d_log_x_lengthscales: Vec<f64>,
    /// Largest diagonal jitter added to any feature's covariance.
    pub max_jitter: f64,
    /// Features whose covariance needed jitter.
    pub jitter_events: usize,
}

struct Partial {
    value: f64,
    m_z: DMatrix<f64>,
    m_x: DMatrix<f64>,
    d_log_variance: Vec<[f64; 4]>,
    d_noise: Vec<f64>,
    max_jitter: f64,
    jitter_events: usize,
}

/// `sum_j log N(y_j | 0, K_j + noise_j I)` and optionally its gradient.
pub fn likelihood_and_grad(
    y: &DMatrix<f64>,
    inputs: &JointInputs,
    params: &ModelParams,
    kind: &KernelKind,
    with_grad: bool,
) -> Result<LikelihoodGrad> {
    let (n, p) = y.shape();
    if inputs.len() != n {
        return Err(Error::invalid(format!("Y has {n} rows but there are {} inputs", inputs.len())));
    }
    if params.p() != p {
        return Err(Error::invalid(format!("Y has {p} features but parameters are given for {}", params.p())));
    }
    if p == 0 {
        return Err(Error::invalid("no features to fit"));
    }
    kind.validate()?;
    let mask = kind.components();
    let grams = UnitGrams::new(inputs, &params.kernel_params(0), kind, with_grad)?;
    let unit: Vec<(Component, DMatrix<f64>)> = mask.iter().map(|c| (c, grams.component(c))).collect();

    let parts = map_chunks(chunks(p, MAX_FEATURE_CHUNKS), |range| {
        let mut part = Partial {
            value: 0.0,
            m_z: DMatrix::zeros(if with_grad { n } else { 0 }, if with_grad { n } else { 0 }),
            m_x: DMatrix::zeros(if with_grad { n } else { 0 }, if with_grad { n } else { 0 }),
            d_log_variance: Vec::with_capacity(range.len()),
            d_noise: Vec::with_capacity(range.len()),
            max_jitter: 0.0,
            jitter_events: 0,
        };
        for j in range {
            let f = &params.features[j];
            let mut k = DMatrix::zeros(n, n);
            for (c, g) in &unit {
                add_scaled(&mut k, f.variance(*c), g);
            }
            let yj = DVector::from_column_slice(y.column(j).as_slice());
            let terms = lml_terms(&yj, &k, f.noise_variance).map_err(|e| e.for_feature(j))?;
            if !terms.value.is_finite() {
                return Err(Error::NonFiniteObjective { iteration: 0, snapshot: format!("feature {j}") });
            }
            part.value += terms.value;
            if terms.factor.jitter() > 0.0 {
                part.jitter_events += 1;
                part.max_jitter = part.max_jitter.max(terms.factor.jitter());
            }
            if !with_grad {
                continue;
            }
            // one pass over W = 0.5 (alpha alpha^T - A^{-1}) accumulating every gradient term
            let inv = terms.factor.inverse();
            let alpha = terms.alpha.as_slice();
            let active = |c: Component| if mask.contains(c) { f.variance(c) } else { 0.0 };
            let (sz, sx, szx) = (active(Component::Z), active(Component::X), active(Component::Zx));
            let (gz, gx) = (grams.z.value.as_slice(), grams.x.value.as_slice());
            let (m_z, m_x) = (part.m_z.as_mut_slice(), part.m_x.as_mut_slice());
            let (mut s_w, mut s_z, mut s_x, mut s_zx, mut tr) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (col, inv_col) in inv.as_slice().chunks_exact(n).enumerate() {
                let ac = alpha[col];
                for (row, a_inv) in inv_col.iter().enumerate() {
                    let k = col * n + row;
                    let w = 0.5 * (alpha[row] * ac - a_inv);
                    let (wz, wx) = (w * gz[k], w * gx[k]);
                    s_w += w;
                    s_z += wz;
                    s_x += wx;
                    s_zx += wz * gx[k];
                    m_z[k] += sz * w + szx * wx;
                    m_x[k] += sx * w + szx * wz;
                }
                tr += 0.5 * (ac * ac - inv_col[col]);
            }
            let mut dv = [0.0; 4];
            for (idx, c) in Component::ALL.iter().enumerate() {
                if mask.contains(*c) {
                    let s = match c {
                        Component::Bias => s_w,
                        Component::Z => s_z,
                        Component::X => s_x,
                        Component::Zx => s_zx,
                    };
                    dv[idx] = f.variance(*c) * s;
                }
            }
            part.d_log_variance.push(dv);
            part.d_noise.push(tr);
        }
        Ok(part)
    })?;

    let mut out = LikelihoodGrad {
        value: 0.0,
        d_z: DMatrix::zeros(n, inputs.q()),
        d_x: DMatrix::zeros(n, inputs.c()),
        d_log_variance: Vec::with_capacity(p),
        d_noise: Vec::with_capacity(p),
        d_log_z_lengthscales: vec![0.0; params.z_lengthscales.len()],
        d_log_x_lengthscales: vec![0.0; params.x_lengthscales.len()],
        max_jitter: 0.0,
        jitter_events: 0,
    };
    let mut m_z = DMatrix::zeros(if with_grad { n } else { 0 }, if with_grad { n } else { 0 });
    let mut m_x = m_z.clone();
    for part in parts {
        out.value += part.value;
        out.max_jitter = out.max_jitter.max(part.max_jitter);
        out.jitter_events += part.jitter_events;
        if with_grad {
            m_z += part.m_z;
            m_x += part.m_x;
            out.d_log_variance.extend(part.d_log_variance);
            out.d_noise.extend(part.d_noise);
        }
    }
    if !with_grad {
        return Ok(out);
    }
    // each input enters row i and column i of K; W and M are symmetric
    if kind.uses_latent() {
        for (d, dl) in grams.z.d_lengthscale.iter().enumerate() {
            out.d_log_z_lengthscales[d] = params.z_lengthscales[d] * m_z.dot(dl);
        }
        for (d, df) in grams.z.d_first.iter().enumerate() {
            out.d_z.set_column(d, &(m_z.component_mul(df).column_sum() * 2.0));
        }
    }
    if kind.uses_covariates() {
        for (d, dl) in grams.x.d_lengthscale.iter().enumerate() {
            out.d_log_x_lengthscales[d] = params.x_lengthscales[d] * m_x.dot(dl);
        }
        for (d, df) in grams.x.d_first.iter().enumerate() {
            out.d_x.set_column(d, &(m_x.component_mul(df).column_sum() * 2.0));
        }
    }
    Ok(out)
}

fn add_scaled(a: &mut DMatrix<f64>, s: f64, b: &DMatrix<f64>) {
    a.zip_apply(b, |x, y| *x += s * y);
}

/// `-sum_j log N(y_j | 0, K_j(Z, X) + noise_j I)`.
pub fn cgplvm_nll(y: &DMatrix<f64>, inputs: &JointInputs, params: &ModelParams, kind: &KernelKind) -> Result<f64> {
    Ok(-likelihood_and_grad(y, inputs, params, kind, false)?.value)
}

/// Log prior terms of the MAP objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPriorTerms {
    /// `sum_i log N(z_i | 0, I)` at the latent means.
    pub latent: f64,
    /// Exponential prior on every active kernel variance of every feature.
    pub shrinkage: f64,
    /// Log-normal prior on every active lengthscale.
    pub lengthscale: f64,
}

impl LogPriorTerms {
    pub fn total(&self) -> f64 {
        self.latent + self.shrinkage + self.lengthscale
    }

    /// Hyperparameter priors only.
    pub fn hyper(&self) -> f64 {
        self.shrinkage + self.lengthscale
    }
}

pub(crate) fn active_lengthscales<'a>(params: &'a ModelParams, kind: &KernelKind) -> impl Iterator<Item = &'a f64> {
    let z: &[f64] = if kind.uses_latent() { &params.z_lengthscales } else { &[] };
    let x: &[f64] = if kind.uses_covariates() { &params.x_lengthscales } else { &[] };
    z.iter().chain(x)
}

pub fn log_priors(state: &LatentState, params: &ModelParams, cfg: &ModelConfig) -> LogPriorTerms {
    let latent = state.z_mean.iter().map(|z| -0.5 * z * z - LN_SQRT_2PI).sum();
    let rate = cfg.priors.variance_rate;
    let mask = cfg.kernel.components();
    let shrinkage = params
        .features
        .iter()
        .flat_map(|f| mask.iter().map(move |c| rate.ln() - rate * f.variance(c)))
        .sum();
    let (m, s) = (cfg.priors.lengthscale_log_mean, cfg.priors.lengthscale_log_std);
    let lengthscale = active_lengthscales(params, &cfg.kernel)
        .map(|l| {
            let t = (l.ln() - m) / s;
            -0.5 * t * t - l.ln() - s.ln() - LN_SQRT_2PI
        })
        .sum();
    LogPriorTerms { latent, shrinkage, lengthscale }
}

/// `KL(N(mean, diag(exp(log_std))^2) || N(0, I))`.
pub fn kl_standard_normal(mean: &[f64], log_std: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

/// Total KL of the latent posteriors.
pub(crate) fn kl_latent(state: &LatentState) -> f64 {
    kl_standard_normal(state.z_mean.as_slice(), state.z_log_std.as_slice())
}

/// Posterior of censored entry `k` as a truncated normal.
pub(crate) fn censored_posterior(
    ds: &Dataset,
    state: &LatentState,
    prior: &CensoringPrior,
    k: usize,
) -> Result<TruncatedNormal> {
    let e = ds.censored()[k];
    TruncatedNormal::new(state.x_cens_mean[k], state.x_cens_log_std[k].exp(), e.lower, prior.effective_upper(e.upper))
}

pub(crate) fn kl_censored(ds: &Dataset, state: &LatentState, prior: Option<&CensoringPrior>) -> Result<f64> {
    if !ds.has_censoring() {
        return Ok(0.0);
    }
    let prior = prior.ok_or_else(|| Error::invalid("censored covariates require a Weibull prior"))?;
    ds.censored()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            kl_q_censored(
                (state.x_cens_mean[k], state.x_cens_log_std[k].exp()),
                prior,
                e.lower,
                prior.effective_upper(e.upper),
            )
        })
        .sum()
}

/// One reparameterized draw of the latent inputs and censored covariates.
pub(crate) struct McDraw {
    pub z: DMatrix<f64>,
    pub eps: DMatrix<f64>,
    pub x_raw: DMatrix<f64>,
    pub u: Vec<f64>,
}

pub(crate) fn draw<R: Rng + ?Sized>(
    ds: &Dataset,
    state: &LatentState,
    prior: Option<&CensoringPrior>,
    rng: &mut R,
) -> Result<McDraw> {
    let (n, q) = state.z_mean.shape();
    let eps = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(n, q, |i, d| state.z_mean[(i, d)] + state.z_log_std[(i, d)].exp() * eps[(i, d)]);
    let mut x_raw = ds.x().clone();
    let mut u = Vec::with_capacity(ds.censored().len());
    if ds.has_censoring() {
        let prior = prior.ok_or_else(|| Error::invalid("censored covariates require a Weibull prior"))?;
        for (k, e) in ds.censored().iter().enumerate() {
            let uk: f64 = rng.random();
            x_raw[(e.row, e.col)] = censored_posterior(ds, state, prior, k)?.sample(uk)?;
            u.push(uk);
        }
    }
    Ok(McDraw { z, eps, x_raw, u })
}

/// Monte-Carlo evidence lower bound:
/// `E_q log p(Y | Z, X) - KL(q(Z) || p(Z)) - sum KL(q(x_cens) || p(x_cens))`.
pub fn elbo<R: Rng + ?Sized>(
    ds: &Dataset,
    state: &LatentState,
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<f64> {
    cfg.validate()?;
    if state.z_mean.nrows() != ds.n() || state.z_log_std.shape() != state.z_mean.shape() {
        return Err(Error::invalid("latent state does not match the dataset"));
    }
    if state.x_cens_mean.len() != ds.censored().len() || state.x_cens_log_std.len() != ds.censored().len() {
        return Err(Error::invalid("censored posterior count does not match the dataset"));
    }
    let prior = cfg.censoring.as_ref();
    let mut expected = 0.0;
    for _ in 0..cfg.mc_samples {
        let d = draw(ds, state, prior, rng)?;
        let inputs = JointInputs::new(d.z, ds.to_kernel_units(&d.x_raw))?;
        expected += likelihood_and_grad(ds.y(), &inputs, params, &cfg.kernel, false)?.value;
    }
    expected /= cfg.mc_samples as f64;
    Ok(expected - kl_latent(state) - kl_censored(ds, state, prior)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, IntegrationDomain};
    use crate::model::{CensoredEntry, FeatureParams, Mode};
    use crate::testutil::central_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_params(rng: &mut ChaCha8Rng, p: usize, q: usize, c: usize) -> ModelParams {
        ModelParams {
            features: (0..p)
                .map(|_| FeatureParams {
                    bias_variance: rng.random_range(0.1..1.0),
                    z_variance: rng.random_range(0.3..1.5),
                    x_variance: rng.random_range(0.3..1.5),
                    zx_variance: rng.random_range(0.1..1.0),
                    noise_variance: rng.random_range(0.05..0.3),
                })
                .collect(),
            z_lengthscales: (0..q).map(|_| rng.random_range(0.5..2.0)).collect(),
            x_lengthscales: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
            domain: IntegrationDomain::default(),
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, q: usize, c: usize) -> JointInputs {
        JointInputs::new(
            DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0)),
            DMatrix::from_fn(n, c, |_, _| rng.random_range(-2.0..2.0)),
        )
        .unwrap()
    }

    fn kinds() -> Vec<KernelKind> {
        vec![KernelKind::SeArd, KernelKind::Add, KernelKind::Int, KernelKind::add_int()]
    }

    #[test]
    fn single_feature_reduces_to_marginal_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(&mut rng, 1, 1, 1);
        let inputs = random_inputs(&mut rng, 5, 1, 1);
        let y = DMatrix::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0));
        let kind = KernelKind::add_int();
        let k = gram(&inputs, &params.kernel_params(0), &kind).unwrap();
        let lml = crate::gp::log_marginal_likelihood(
            &DVector::from_column_slice(y.as_slice()),
            &k,
            params.features[0].noise_variance,
        )
        .unwrap();
        let nll = cgplvm_nll(&y, &inputs, &params, &kind).unwrap();
        assert!((nll + lml).abs() < 1e-12);
    }

    #[test]
    fn feature_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = random_params(&mut rng, 3, 1, 1);
        let inputs = random_inputs(&mut rng, 6, 1, 1);
        let y = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let kind = KernelKind::add_int();
        let perm = [2, 0, 1];
        let y2 = DMatrix::from_fn(6, 3, |i, j| y[(i, perm[j])]);
        let mut p2 = params.clone();
        p2.features = perm.iter().map(|&j| params.features[j]).collect();
        let a = cgplvm_nll(&y, &inputs, &params, &kind).unwrap();
        let b = cgplvm_nll(&y2, &inputs, &p2, &kind).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn matches_explicit_three_by_three_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng, 2, 1, 1);
        let inputs = random_inputs(&mut rng, 3, 1, 1);
        let y = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let kind = KernelKind::add_int();
        let mut oracle = 0.0;
        for j in 0..2 {
            let mut a = [[0.0; 3]; 3];
            for r in 0..3 {
                for s in 0..3 {
                    a[r][s] = crate::kernels::kernel(
                        (&[inputs.z[(r, 0)]], &[inputs.x[(r, 0)]]),
                        (&[inputs.z[(s, 0)]], &[inputs.x[(s, 0)]]),
                        &params.kernel_params(j),
                        &kind,
                    )
                    .unwrap();
                }
                a[r][r] += params.features[j].noise_variance;
            }
            let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
            let cof = |r: usize, s: usize| {
                let rr: Vec<usize> = (0..3).filter(|&i| i != r).collect();
                let ss: Vec<usize> = (0..3).filter(|&i| i != s).collect();
                let m = a[rr[0]][ss[0]] * a[rr[1]][ss[1]] - a[rr[0]][ss[1]] * a[rr[1]][ss[0]];
                if (r + s) % 2 == 0 { m } else { -m }
            };
            let mut quad = 0.0;
            for r in 0..3 {
                for s in 0..3 {
                    quad += y[(r, j)] * cof(s, r) / det * y[(s, j)];
                }
            }
            oracle += 0.5 * quad + 0.5 * det.ln() + 1.5 * (2.0 * PI).ln();
        }
        let nll = cgplvm_nll(&y, &inputs, &params, &kind).unwrap();
        assert!((nll - oracle).abs() < 1e-10 * oracle.abs(), "{nll} vs {oracle}");
    }

    fn perturbed(params: &ModelParams, which: usize, h: f64) -> ModelParams {
        // index layout: per feature 4 variances + noise, then z and x lengthscales
        let mut p = params.clone();
        let per = 5;
        let nf = p.features.len();
        if which < nf * per {
            let f = &mut p.features[which / per];
            match which % per {
                4 => f.noise_variance += h,
                k => {
                    let c = Component::ALL[k];
                    f.set_variance(c, f.variance(c) * h.exp());
                }
            }
        } else {
            let r = which - nf * per;
            if r < p.z_lengthscales.len() {
                p.z_lengthscales[r] *= h.exp();
            } else {
                p.x_lengthscales[r - p.z_lengthscales.len()] *= h.exp();
            }
        }
        p
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-4 * b.abs().max(1e-4)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in kinds() {
            let (n, q, c) = (6, 1, 1);
            let params = random_params(&mut rng, 2, q, c);
            let inputs = random_inputs(&mut rng, n, q, c);
            let y = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let g = likelihood_and_grad(&y, &inputs, &params, &kind, true).unwrap();
            let f = |p: &ModelParams, inp: &JointInputs| likelihood_and_grad(&y, inp, p, &kind, false).unwrap().value;
            for j in 0..2 {
                for (k, comp) in Component::ALL.iter().enumerate() {
                    let fd = central_diff(|h| f(&perturbed(&params, j * 5 + k, h), &inputs), 1e-5);
                    let an = if kind.components().contains(*comp) { g.d_log_variance[j][k] } else { 0.0 };
                    assert!(close(an, fd), "{kind:?} variance {j} {comp}: {an} vs {fd}");
                }
                let fd = central_diff(|h| f(&perturbed(&params, j * 5 + 4, h), &inputs), 1e-6);
                assert!(close(g.d_noise[j], fd), "noise {j}");
            }
            for d in 0..q {
                let fd = central_diff(|h| f(&perturbed(&params, 10 + d, h), &inputs), 1e-5);
                assert!(close(g.d_log_z_lengthscales[d], fd), "{kind:?} z lengthscale");
            }
            for d in 0..c {
                let fd = central_diff(|h| f(&perturbed(&params, 10 + q + d, h), &inputs), 1e-5);
                assert!(close(g.d_log_x_lengthscales[d], fd), "{kind:?} x lengthscale");
            }
            for i in 0..n {
                let fd = central_diff(
                    |h| {
                        let mut inp = inputs.clone();
                        inp.z[(i, 0)] += h;
                        f(&params, &inp)
                    },
                    1e-5,
                );
                assert!(close(g.d_z[(i, 0)], fd), "{kind:?} z[{i}]: {} vs {fd}", g.d_z[(i, 0)]);
                let fd = central_diff(
                    |h| {
                        let mut inp = inputs.clone();
                        inp.x[(i, 0)] += h;
                        f(&params, &inp)
                    },
                    1e-5,
                );
                assert!(close(g.d_x[(i, 0)], fd), "{kind:?} x[{i}]");
            }
        }
    }

    #[test]
    fn gradients_with_two_latent_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kind = KernelKind::add_int();
        let params = random_params(&mut rng, 2, 2, 1);
        let inputs = random_inputs(&mut rng, 5, 2, 1);
        let y = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let g = likelihood_and_grad(&y, &inputs, &params, &kind, true).unwrap();
        for i in 0..5 {
            for d in 0..2 {
                let fd = central_diff(
                    |h| {
                        let mut inp = inputs.clone();
                        inp.z[(i, d)] += h;
                        likelihood_and_grad(&y, &inp, &params, &kind, false).unwrap().value
                    },
                    1e-5,
                );
                assert!(close(g.d_z[(i, d)], fd));
            }
        }
    }

    fn state_for(z: DMatrix<f64>) -> LatentState {
        let shape = z.shape();
        LatentState {
            z_mean: z,
            z_log_std: DMatrix::zeros(shape.0, shape.1),
            x_cens_mean: vec![],
            x_cens_log_std: vec![],
        }
    }

    #[test]
    fn prior_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = random_params(&mut rng, 1, 1, 1);
        params.features[0].z_variance = 2.0;
        let cfg = ModelConfig::new(1, KernelKind::AddInt(crate::kernels::ComponentMask::only(Component::Z)));
        let one = log_priors(&state_for(DMatrix::zeros(1, 1)), &params, &cfg);
        assert!((one.latent + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((one.shrinkage + 2.0).abs() < 1e-15);
        let two = log_priors(&state_for(DMatrix::zeros(2, 1)), &params, &cfg);
        assert!((two.latent - 2.0 * one.latent).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_kl() {
        assert_eq!(kl_standard_normal(&[0.0], &[0.0]), 0.0);
        assert!((kl_standard_normal(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(kl_standard_normal(&m, &s) >= 0.0);
        }
    }

    fn small_dataset(rng: &mut ChaCha8Rng, n: usize, censored: Vec<CensoredEntry>) -> Dataset {
        let y = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.5..2.0));
        Dataset::new(y, x, censored, vec!["a".into(), "b".into()], vec!["t".into()]).unwrap()
    }

    #[test]
    fn elbo_is_deterministic_and_has_delta_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = small_dataset(&mut rng, 5, vec![]);
        let params = random_params(&mut rng, 2, 1, 1);
        let mut cfg = ModelConfig::new(1, KernelKind::add_int());
        cfg.mode = Mode::Variational;
        let mut state = state_for(DMatrix::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0)));
        state.z_log_std.fill(-20.0);
        let a = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let inputs = JointInputs::new(state.z_mean.clone(), ds.x_kernel()).unwrap();
        let limit = -cgplvm_nll(ds.y(), &inputs, &params, &cfg.kernel).unwrap() - kl_latent(&state);
        assert!((a - limit).abs() < 1e-3);
    }

    #[test]
    fn elbo_with_censoring_is_finite_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cens = vec![CensoredEntry { row: 1, col: 0, lower: 1.0, upper: f64::INFINITY }];
        let ds = small_dataset(&mut rng, 6, cens);
        let params = random_params(&mut rng, 2, 1, 1);
        let mut cfg = ModelConfig::new(1, KernelKind::add_int());
        cfg.mode = Mode::Variational;
        cfg.censoring = Some(CensoringPrior::new(2.0, 1.0, 6.0).unwrap());
        let mut state = state_for(DMatrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0)));
        state.z_log_std.fill(-2.0);
        state.x_cens_mean = vec![1.3];
        state.x_cens_log_std = vec![(0.2f64).ln()];
        let a = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn elbo_stays_below_evidence() {
        // two latent points, one feature: log p(Y) by 2-D Gauss-Legendre quadrature over (z1, z2)
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = DMatrix::from_column_slice(2, 1, &[0.8, -0.6]);
        let x = DMatrix::from_column_slice(2, 1, &[0.3, 1.1]);
        let ds = Dataset::new(y, x, vec![], vec!["a".into()], vec!["t".into()]).unwrap();
        let params = random_params(&mut rng, 1, 1, 1);
        let mut cfg = ModelConfig::new(1, KernelKind::add_int());
        cfg.mode = Mode::Variational;
        let xk = ds.x_kernel();
        let lik = |z1: f64, z2: f64| {
            let inputs = JointInputs::new(DMatrix::from_column_slice(2, 1, &[z1, z2]), xk.clone()).unwrap();
            likelihood_and_grad(ds.y(), &inputs, &params, &cfg.kernel, false).unwrap().value
        };
        let normal = |z: f64| (-0.5 * z * z - LN_SQRT_2PI).exp();
        let evidence = crate::quadrature::gauss_legendre(80, -8.0, 8.0, |z1| {
            crate::quadrature::gauss_legendre(80, -8.0, 8.0, |z2| lik(z1, z2).exp() * normal(z1) * normal(z2))
        })
        .ln();
        cfg.mc_samples = 4000;
        for (m, s) in [([0.0, 0.0], -0.3), ([0.5, -0.5], -1.0), ([1.0, 1.0], 0.0)] {
            let mut state = state_for(DMatrix::from_column_slice(2, 1, &m));
            state.z_log_std.fill(s);
            let bound = elbo(&ds, &state, &params, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            assert!(bound <= evidence + 1e-2, "{bound} > {evidence}");
        }
    }
}
