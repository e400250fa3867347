use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{init_latent, InitStrategy};
use super::optimizer::{Adam, OptimizerConfig};
use crate::error::{Error, Result};
use crate::kernels::{Component, JointInputs, KernelKind};
use crate::model::{
    draw, kl_censored, kl_latent, kl_q_censored_grad, likelihood_and_grad, log_priors, Dataset, FeatureParams,
    LatentState, Mode, ModelConfig, ModelParams,
};
use crate::truncnorm::TruncatedNormal;

/// Censored posteriors are kept within this many standard deviations of
/// their truncation interval so the sampler never sees a vanishing mass.
const MAX_STANDARDIZED_GAP: f64 = 6.0;
const INIT_NOISE: f64 = 0.1;
/// Acceptable range for the spread of fitted latent coordinates.
pub const LATENT_SCALE_RANGE: (f64, f64) = (0.3, 3.0);

/// Warnings and counters collected during a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Objective evaluations in which some feature needed jitter.
    pub jitter_events: usize,
    pub max_jitter: f64,
    /// Times a censored posterior's scale was widened to keep mass in its interval.
    pub sigma_widenings: usize,
    /// Per latent dimension, the standard deviation of the fitted means.
    pub latent_scale: Vec<f64>,
    pub latent_scale_ok: bool,
    /// The smoothed final objective is at least the initial one.
    pub monotone_trend_ok: bool,
    /// Kernel inputs outside the integration domain of the mean-zero kernel.
    pub inputs_outside_domain: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: LatentState,
    pub params: ModelParams,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub diagnostics: Diagnostics,
    pub config: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Index of the winning restart.
    pub restart: usize,
    /// Smoothed final objective of every restart (`None` if it failed).
    pub restart_objectives: Vec<Option<f64>>,
}

impl FitResult {
    /// Mean of the last `window` objective values.
    pub fn final_objective(&self) -> f64 {
        smoothed_tail(&self.objective_trace, self.optimizer.smoothing_window)
    }
}

/// Patience rule on the smoothed objective: stop after `patience`
/// consecutive checks without a relative improvement above `rtol`.
#[derive(Debug, Clone)]
struct Plateau {
    best: f64,
    stall: usize,
}

impl Plateau {
    fn new() -> Self {
        Plateau { best: f64::NEG_INFINITY, stall: 0 }
    }

    /// Record a smoothed value; returns true once the run has stalled.
    fn update(&mut self, smoothed: f64, rtol: f64, patience: usize) -> bool {
        let improved = !self.best.is_finite() || smoothed > self.best + rtol * self.best.abs().max(1e-12);
        if improved {
            self.best = smoothed;
            self.stall = 0;
        } else {
            self.stall += 1;
        }
        self.stall >= patience
    }
}

fn smoothed_tail(trace: &[f64], window: usize) -> f64 {
    let w = window.min(trace.len()).max(1);
    trace[trace.len() - w..].iter().sum::<f64>() / w as f64
}

/// Positions of every free quantity in the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    q: usize,
    variational: bool,
    n_cens: usize,
    comps: Vec<Component>,
    n_zls: usize,
    n_xls: usize,
    p: usize,
}

impl Layout {
    fn new(ds: &Dataset, cfg: &ModelConfig) -> Self {
        Layout {
            n: ds.n(),
            q: cfg.q,
            variational: cfg.mode == Mode::Variational,
            n_cens: ds.censored().len(),
            comps: cfg.kernel.components().iter().collect(),
            n_zls: cfg.q,
            n_xls: ds.c(),
            p: ds.p(),
        }
    }

    fn z_log_std(&self) -> usize {
        self.n * self.q
    }
    fn cens(&self) -> usize {
        self.z_log_std() + if self.variational { self.n * self.q } else { 0 }
    }
    fn per_feature(&self) -> usize {
        self.comps.len() + 1
    }
    fn feature(&self, j: usize) -> usize {
        self.cens() + 2 * self.n_cens + j * self.per_feature()
    }
    fn zls(&self) -> usize {
        self.feature(self.p)
    }
    fn xls(&self) -> usize {
        self.zls() + self.n_zls
    }
    fn dim(&self) -> usize {
        self.xls() + self.n_xls
    }

    fn pack(&self, s: &LatentState, p: &ModelParams, floor: f64) -> Vec<f64> {
        let mut th = vec![0.0; self.dim()];
        th[..self.n * self.q].copy_from_slice(s.z_mean.as_slice());
        if self.variational {
            th[self.z_log_std()..self.cens()].copy_from_slice(s.z_log_std.as_slice());
        }
        for k in 0..self.n_cens {
            th[self.cens() + k] = s.x_cens_mean[k];
            th[self.cens() + self.n_cens + k] = s.x_cens_log_std[k];
        }
        for (j, f) in p.features.iter().enumerate() {
            let o = self.feature(j);
            for (i, c) in self.comps.iter().enumerate() {
                th[o + i] = f.variance(*c).ln();
            }
            th[o + self.comps.len()] = (f.noise_variance - floor).ln();
        }
        for d in 0..self.n_zls {
            th[self.zls() + d] = p.z_lengthscales[d].ln();
        }
        for d in 0..self.n_xls {
            th[self.xls() + d] = p.x_lengthscales[d].ln();
        }
        th
    }

    fn unpack(&self, th: &[f64], s: &mut LatentState, p: &mut ModelParams, floor: f64) {
        s.z_mean.as_mut_slice().copy_from_slice(&th[..self.n * self.q]);
        if self.variational {
            s.z_log_std.as_mut_slice().copy_from_slice(&th[self.z_log_std()..self.cens()]);
        }
        for k in 0..self.n_cens {
            s.x_cens_mean[k] = th[self.cens() + k];
            s.x_cens_log_std[k] = th[self.cens() + self.n_cens + k];
        }
        for (j, f) in p.features.iter_mut().enumerate() {
            let o = self.feature(j);
            for (i, c) in self.comps.iter().enumerate() {
                f.set_variance(*c, th[o + i].exp());
            }
            f.noise_variance = floor + th[o + self.comps.len()].exp();
        }
        for d in 0..self.n_zls {
            p.z_lengthscales[d] = th[self.zls() + d].exp();
        }
        for d in 0..self.n_xls {
            p.x_lengthscales[d] = th[self.xls() + d].exp();
        }
    }

    /// Mask of kernel-variance entries.
    fn variance_entries(&self) -> Vec<bool> {
        let mut m = vec![false; self.dim()];
        for j in 0..self.p {
            let o = self.feature(j);
            m[o..o + self.comps.len()].iter_mut().for_each(|v| *v = true);
        }
        m
    }
}

/// Kernel variances used at the start of fitting and held during warm-up.
pub(crate) fn initial_variances(kind: &KernelKind) -> FeatureParams {
    let mut f = FeatureParams { bias_variance: 0.0, z_variance: 0.0, x_variance: 0.0, zx_variance: 0.0, noise_variance: INIT_NOISE };
    let mask = kind.components();
    for c in mask.iter() {
        let v = match (kind, c) {
            (KernelKind::AddInt(_), Component::Bias | Component::Zx) => 0.1,
            _ => 1.0,
        };
        f.set_variance(c, v);
    }
    f
}

pub(crate) fn initial_params(ds: &Dataset, cfg: &ModelConfig) -> ModelParams {
    ModelParams {
        features: vec![initial_variances(&cfg.kernel); ds.p()],
        z_lengthscales: vec![1.0; cfg.q],
        x_lengthscales: vec![1.0; ds.c()],
        domain: cfg.domain,
    }
}

/// Objective value and gradient with respect to the flat parameter vector.
struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    max_jitter: f64,
    jitter_events: usize,
}

fn evaluate<R: Rng + ?Sized>(
    ds: &Dataset,
    cfg: &ModelConfig,
    layout: &Layout,
    s: &LatentState,
    p: &ModelParams,
    rng: &mut R,
) -> Result<Evaluation> {
    let mut grad = vec![0.0; layout.dim()];
    let (n, q) = (layout.n, layout.q);
    let kind = &cfg.kernel;
    let mut value = 0.0;
    let mut max_jitter = 0.0f64;
    let mut jitter_events = 0;
    let mut hyper = vec![0.0; layout.dim()];

    // hyperparameter gradients are shared between the two modes
    let add_hyper = |lg: &crate::model::LikelihoodGrad, w: f64, hyper: &mut [f64]| {
        for j in 0..layout.p {
            let o = layout.feature(j);
            for (i, c) in layout.comps.iter().enumerate() {
                let idx = Component::ALL.iter().position(|a| a == c).expect("component");
                hyper[o + i] += w * lg.d_log_variance[j][idx];
            }
            hyper[o + layout.comps.len()] += w * lg.d_noise[j] * (p.features[j].noise_variance - cfg.priors.noise_floor);
        }
        for d in 0..layout.n_zls {
            hyper[layout.zls() + d] += w * lg.d_log_z_lengthscales[d];
        }
        for d in 0..layout.n_xls {
            hyper[layout.xls() + d] += w * lg.d_log_x_lengthscales[d];
        }
    };

    match cfg.mode {
        Mode::Map => {
            let inputs = JointInputs::new(s.z_mean.clone(), ds.x_kernel())?;
            let lg = likelihood_and_grad(ds.y(), &inputs, p, kind, true)?;
            value += lg.value;
            max_jitter = lg.max_jitter;
            jitter_events += lg.jitter_events;
            grad[..n * q].copy_from_slice(lg.d_z.as_slice());
            add_hyper(&lg, 1.0, &mut hyper);
            value += log_priors(s, p, cfg).latent;
            for i in 0..n * q {
                grad[i] -= s.z_mean.as_slice()[i];
            }
        }
        Mode::Variational => {
            let prior = cfg.censoring.as_ref();
            let m = cfg.mc_samples as f64;
            for _ in 0..cfg.mc_samples {
                let d = draw(ds, s, prior, rng)?;
                let inputs = JointInputs::new(d.z, ds.to_kernel_units(&d.x_raw))?;
                let lg = likelihood_and_grad(ds.y(), &inputs, p, kind, true)?;
                value += lg.value / m;
                max_jitter = max_jitter.max(lg.max_jitter);
                jitter_events += lg.jitter_events;
                for i in 0..n * q {
                    let g = lg.d_z.as_slice()[i] / m;
                    grad[i] += g;
                    grad[layout.z_log_std() + i] += g * d.eps.as_slice()[i] * s.z_log_std.as_slice()[i].exp();
                }
                if let Some(prior) = prior {
                    for (k, e) in ds.censored().iter().enumerate() {
                        let sigma = s.x_cens_log_std[k].exp();
                        let tn = TruncatedNormal::new(s.x_cens_mean[k], sigma, e.lower, prior.effective_upper(e.upper))?;
                        let (_, dmu, dsigma) = tn.sample_with_grad(d.u[k])?;
                        let dx = lg.d_x[(e.row, e.col)] / ds.x_transform()[e.col].scale / m;
                        grad[layout.cens() + k] += dx * dmu;
                        grad[layout.cens() + layout.n_cens + k] += dx * dsigma * sigma;
                    }
                }
                add_hyper(&lg, 1.0 / m, &mut hyper);
            }
            value -= kl_latent(s);
            for i in 0..n * q {
                grad[i] -= s.z_mean.as_slice()[i];
                grad[layout.z_log_std() + i] -= (2.0 * s.z_log_std.as_slice()[i]).exp() - 1.0;
            }
            if let Some(prior) = prior {
                value -= kl_censored(ds, s, Some(prior))?;
                for (k, e) in ds.censored().iter().enumerate() {
                    let sigma = s.x_cens_log_std[k].exp();
                    let (_, dmu, dsigma) =
                        kl_q_censored_grad((s.x_cens_mean[k], sigma), prior, e.lower, prior.effective_upper(e.upper))?;
                    grad[layout.cens() + k] -= dmu;
                    grad[layout.cens() + layout.n_cens + k] -= dsigma * sigma;
                }
            }
        }
    }

    // hyperparameter priors
    let terms = log_priors(s, p, cfg);
    value += terms.hyper();
    let rate = cfg.priors.variance_rate;
    for j in 0..layout.p {
        let o = layout.feature(j);
        for (i, c) in layout.comps.iter().enumerate() {
            hyper[o + i] -= rate * p.features[j].variance(*c);
        }
    }
    let (mu, sd) = (cfg.priors.lengthscale_log_mean, cfg.priors.lengthscale_log_std);
    let ls_grad = |l: f64| -(l.ln() - mu) / (sd * sd) - 1.0;
    if kind.uses_latent() {
        for d in 0..layout.n_zls {
            hyper[layout.zls() + d] += ls_grad(p.z_lengthscales[d]);
        }
    }
    if kind.uses_covariates() {
        for d in 0..layout.n_xls {
            hyper[layout.xls() + d] += ls_grad(p.x_lengthscales[d]);
        }
    }
    for (g, h) in grad.iter_mut().zip(&hyper) {
        *g += h;
    }
    Ok(Evaluation { value, grad, max_jitter, jitter_events })
}

/// Widen censored posterior scales so that each interval stays within
/// [`MAX_STANDARDIZED_GAP`] standard deviations of the mean.
/// The fit objective as a function of the flat, unconstrained parameter
/// vector the optimizer works on: latent means, variational log standard
/// deviations, censored-entry parameters, then per-feature log variances and
/// noise, then log lengthscales.
pub struct Objective<'a> {
    ds: &'a Dataset,
    cfg: &'a ModelConfig,
    layout: Layout,
}

impl<'a> Objective<'a> {
    pub fn new(ds: &'a Dataset, cfg: &'a ModelConfig) -> Result<Self> {
        cfg.validate_for(ds)?;
        Ok(Objective { ds, cfg, layout: Layout::new(ds, cfg) })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Starting point of the first restart.
    pub fn initial_point(&self, seed: u64) -> Result<Vec<f64>> {
        let s = init_latent(self.ds, self.cfg, seed, InitStrategy::for_restart(0))?;
        Ok(self.layout.pack(&s, &initial_params(self.ds, self.cfg), self.cfg.priors.noise_floor))
    }

    /// Objective and gradient at `theta`. In variational mode the Monte
    /// Carlo draws come from `draw_seed`, so a fixed seed gives a
    /// deterministic function.
    pub fn value_and_grad(&self, theta: &[f64], draw_seed: u64) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        let mut s = init_latent(self.ds, self.cfg, 0, InitStrategy::Pca)?;
        let mut p = initial_params(self.ds, self.cfg);
        self.layout.unpack(theta, &mut s, &mut p, self.cfg.priors.noise_floor);
        let ev = evaluate(self.ds, self.cfg, &self.layout, &s, &p, &mut ChaCha8Rng::seed_from_u64(draw_seed))?;
        Ok((ev.value, ev.grad))
    }
}

fn project_censored(ds: &Dataset, cfg: &ModelConfig, s: &mut LatentState) -> usize {
    let Some(prior) = cfg.censoring.as_ref() else { return 0 };
    let mut widened = 0;
    for (k, e) in ds.censored().iter().enumerate() {
        let mu = s.x_cens_mean[k];
        let b = prior.effective_upper(e.upper);
        let gap = if mu < e.lower {
            e.lower - mu
        } else if mu > b {
            mu - b
        } else {
            0.0
        };
        let sigma = s.x_cens_log_std[k].exp();
        if gap > MAX_STANDARDIZED_GAP * sigma {
            s.x_cens_log_std[k] = (gap / MAX_STANDARDIZED_GAP).ln();
            widened += 1;
        }
    }
    widened
}

/// State of one optimization run.
struct Run {
    layout: Layout,
    theta: Vec<f64>,
    state: LatentState,
    params: ModelParams,
    adam: Adam,
    rng: ChaCha8Rng,
    trace: Vec<f64>,
    plateau: Plateau,
    converged: bool,
    diag: Diagnostics,
    frozen: Vec<bool>,
    free: Vec<bool>,
}

impl Run {
    fn new(ds: &Dataset, cfg: &ModelConfig, opt: &OptimizerConfig, restart: usize) -> Result<Self> {
        let layout = Layout::new(ds, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        rng.set_stream(restart as u64);
        let init_seed: u64 = rng.random();
        let mut state = init_latent(ds, cfg, init_seed, InitStrategy::for_restart(restart))?;
        let params = initial_params(ds, cfg);
        let mut diag = Diagnostics::default();
        diag.sigma_widenings += project_censored(ds, cfg, &mut state);
        let theta = layout.pack(&state, &params, cfg.priors.noise_floor);
        let dim = layout.dim();
        Ok(Run {
            frozen: layout.variance_entries(),
            free: vec![false; dim],
            layout,
            theta,
            state,
            params,
            adam: Adam::new(dim, opt),
            rng,
            trace: Vec::new(),
            plateau: Plateau::new(),
            converged: false,
            diag,
        })
    }

    fn done(&self, opt: &OptimizerConfig) -> bool {
        self.converged || self.trace.len() >= opt.max_iters
    }

    fn step(&mut self, ds: &Dataset, cfg: &ModelConfig, opt: &OptimizerConfig) -> Result<()> {
        let it = self.trace.len();
        let ev = evaluate(ds, cfg, &self.layout, &self.state, &self.params, &mut self.rng).map_err(|e| match e {
            Error::NonFiniteObjective { snapshot, .. } => Error::NonFiniteObjective { iteration: it, snapshot },
            other => other,
        })?;
        if !ev.value.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { iteration: it, snapshot: snapshot(&self.params) });
        }
        self.trace.push(ev.value);
        self.diag.max_jitter = self.diag.max_jitter.max(ev.max_jitter);
        if ev.jitter_events > 0 {
            self.diag.jitter_events += 1;
        }
        let mask = if it < opt.warmup_iters { &self.frozen } else { &self.free };
        self.adam.step(&mut self.theta, &ev.grad, mask);
        self.layout.unpack(&self.theta, &mut self.state, &mut self.params, cfg.priors.noise_floor);
        let widened = project_censored(ds, cfg, &mut self.state);
        if widened > 0 {
            self.diag.sigma_widenings += widened;
            self.theta = self.layout.pack(&self.state, &self.params, cfg.priors.noise_floor);
        }
        if !self.params.is_valid() || !self.state.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: it, snapshot: snapshot(&self.params) });
        }

        if it + 1 >= opt.warmup_iters.max(opt.smoothing_window) {
            let smoothed = smoothed_tail(&self.trace, opt.smoothing_window);
            self.converged = self.plateau.update(smoothed, opt.convergence_rtol, opt.patience);
        }
        Ok(())
    }

    fn advance(&mut self, ds: &Dataset, cfg: &ModelConfig, opt: &OptimizerConfig, until: usize) -> Result<()> {
        while !self.done(opt) && self.trace.len() < until {
            self.step(ds, cfg, opt)?;
        }
        Ok(())
    }

    fn score(&self, opt: &OptimizerConfig) -> f64 {
        smoothed_tail(&self.trace, opt.smoothing_window)
    }

    fn finish(mut self, ds: &Dataset, cfg: &ModelConfig, opt: &OptimizerConfig, restart: usize, all: Vec<Option<f64>>) -> FitResult {
        let d = &mut self.diag;
        d.latent_scale = (0..cfg.q)
            .map(|c| {
                let col = self.state.z_mean.column(c);
                let m = col.mean();
                (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt()
            })
            .collect();
        d.latent_scale_ok = d.latent_scale.iter().all(|s| (LATENT_SCALE_RANGE.0..=LATENT_SCALE_RANGE.1).contains(s));
        if !d.latent_scale_ok {
            d.warnings.push(format!("latent scale {:?} outside {:?}", d.latent_scale, LATENT_SCALE_RANGE));
        }
        d.monotone_trend_ok = smoothed_tail(&self.trace, opt.smoothing_window) >= self.trace[0];
        if !d.monotone_trend_ok {
            d.warnings.push("smoothed objective ended below its starting value".into());
        }
        let (lo, hi) = (cfg.domain.lower(), cfg.domain.upper());
        let outside = |m: &DMatrix<f64>| m.iter().filter(|v| **v < lo || **v > hi).count();
        d.inputs_outside_domain = outside(&self.state.z_mean) + outside(&ds.x_kernel());
        if d.inputs_outside_domain > 0 && cfg.kernel.base() == crate::kernels::BaseKernel::MeanZero {
            d.warnings.push(format!(
                "{} kernel inputs lie outside the integration domain [{lo}, {hi}]",
                d.inputs_outside_domain
            ));
        }
        if d.jitter_events > 0 {
            d.warnings.push(format!("diagonal jitter up to {:.3e} was needed", d.max_jitter));
        }
        FitResult {
            state: self.state,
            params: self.params,
            objective_trace: self.trace,
            converged: self.converged,
            diagnostics: self.diag,
            config: cfg.clone(),
            optimizer: opt.clone(),
            restart,
            restart_objectives: all,
        }
    }
}

fn snapshot(p: &ModelParams) -> String {
    serde_json::to_string(p).unwrap_or_else(|_| format!("{p:?}"))
}

#[cfg(feature = "parallel")]
fn map_restarts<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_restarts<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Fit latent coordinates, censored posteriors, and hyperparameters by
/// gradient ascent on the MAP objective or the ELBO (plus hyperparameter
/// priors). Restarts use seeds derived from `opt.seed`; the restart with the
/// highest smoothed final objective wins, ties going to the lower index.
pub fn fit(ds: &Dataset, cfg: &ModelConfig, opt: &OptimizerConfig) -> Result<FitResult> {
    cfg.validate_for(ds)?;
    opt.validate()?;
    if cfg.mode == Mode::Map && ds.has_censoring() {
        return Err(Error::invalid("censored covariates require variational mode"));
    }
    let screen = if opt.n_restarts > 1 && opt.screening_iters > 0 { opt.screening_iters } else { usize::MAX };

    let runs: Vec<Result<Run>> = map_restarts(opt.n_restarts, |r| {
        let mut run = Run::new(ds, cfg, opt, r)?;
        run.advance(ds, cfg, opt, screen)?;
        Ok(run)
    });
    let scores: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|r| r.score(opt))).collect();
    let best = best_index(&scores);
    let Some(best) = best else {
        return Err(runs.into_iter().find_map(|r| r.err()).expect("at least one restart"));
    };
    let mut run = runs.into_iter().nth(best).expect("index").expect("successful run");
    run.advance(ds, cfg, opt, usize::MAX)?;
    let mut all = scores;
    all[best] = Some(run.score(opt));
    Ok(run.finish(ds, cfg, opt, best, all))
}

fn best_index(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = s {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}
