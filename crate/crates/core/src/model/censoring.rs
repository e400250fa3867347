//! Truncated Weibull prior for censored covariates and the KL divergence of
//! a truncated-normal posterior against it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::truncnorm::TruncatedNormal;

/// Smallest prior mass a truncation interval may carry.
pub const PRIOR_MASS_FLOOR: f64 = 1e-300;
/// Quadrature order used for the KL divergence.
pub const KL_ORDER: usize = 200;
/// Half-width of the KL integration window in posterior standard deviations.
pub const KL_WINDOW: f64 = 8.0;

/// Weibull(shape, scale) prior on survival times, restricted to
/// `[lower, min(upper, lifespan_cap)]` for each censored individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringPrior {
    pub shape: f64,
    pub scale: f64,
    pub lifespan_cap: f64,
}

impl CensoringPrior {
    pub fn new(shape: f64, scale: f64, lifespan_cap: f64) -> Result<Self> {
        let p = CensoringPrior { shape, scale, lifespan_cap };
        p.validate()?;
        Ok(p)
    }

    /// Cap defaults to three times the largest observed covariate value.
    pub fn with_default_cap(shape: f64, scale: f64, max_observed: f64) -> Result<Self> {
        if !(max_observed > 0.0 && max_observed.is_finite()) {
            return Err(Error::invalid(format!(
                "default lifespan cap needs a positive largest observed value, got {max_observed}"
            )));
        }
        Self::new(shape, scale, 3.0 * max_observed)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("shape", self.shape), ("scale", self.scale), ("lifespan cap", self.lifespan_cap)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("Weibull {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Upper bound actually used for an entry with stated upper bound `b`.
    pub fn effective_upper(&self, b: f64) -> f64 {
        b.min(self.lifespan_cap)
    }

    fn cumulative_hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (x / self.scale).powf(self.shape)
        }
    }

    /// `ln(F(b) - F(a))`, computed from survival functions.
    pub fn ln_interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        if !(a < b) {
            return Err(Error::invalid(format!("truncation interval requires a < b, got [{a}, {b}]")));
        }
        let ha = self.cumulative_hazard(a);
        let ln_mass = if b.is_infinite() {
            -ha
        } else {
            let hb = self.cumulative_hazard(b);
            -ha + (-(-(hb - ha)).exp_m1()).ln()
        };
        if !(ln_mass >= PRIOR_MASS_FLOOR.ln()) {
            return Err(Error::DegenerateTruncation { mass: ln_mass.exp() });
        }
        Ok(ln_mass)
    }

    fn ln_density_untruncated(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let (k, l) = (self.shape, self.scale);
        k.ln() - l.ln() + (k - 1.0) * (x / l).ln() - self.cumulative_hazard(x)
    }

    /// Median of the prior truncated to `[a, b]`.
    pub fn truncated_median(&self, a: f64, b: f64) -> Result<f64> {
        self.ln_interval_mass(a, b)?;
        let ha = self.cumulative_hazard(a);
        let gap = if b.is_infinite() { f64::INFINITY } else { self.cumulative_hazard(b) - ha };
        // S(x) = (S(a) + S(b)) / 2
        let h = ha + std::f64::consts::LN_2 - (-gap).exp().ln_1p();
        Ok((self.scale * h.powf(1.0 / self.shape)).clamp(a, b))
    }
}

/// Log-density of the Weibull prior truncated to `[a, b]`; `-inf` outside.
pub fn trunc_weibull_logpdf(x: f64, prior: &CensoringPrior, a: f64, b: f64) -> Result<f64> {
    prior.validate()?;
    let ln_mass = prior.ln_interval_mass(a, b)?;
    if x < a || x > b {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(prior.ln_density_untruncated(x) - ln_mass)
}

/// `KL(TruncNormal_[a,b](mu, sigma^2) || TruncWeibull_[a,b](shape, scale))`.
pub fn kl_q_censored(q: (f64, f64), prior: &CensoringPrior, a: f64, b: f64) -> Result<f64> {
    kl_q_censored_with_order(q, prior, a, b, KL_ORDER)
}

/// [`kl_q_censored`] with an explicit quadrature order.
pub fn kl_q_censored_with_order(q: (f64, f64), prior: &CensoringPrior, a: f64, b: f64, order: usize) -> Result<f64> {
    Ok(kl_terms(q, prior, a, b, order, false)?.0)
}

/// KL divergence and its gradient with respect to `(mu, sigma)`.
pub fn kl_q_censored_grad(q: (f64, f64), prior: &CensoringPrior, a: f64, b: f64) -> Result<(f64, f64, f64)> {
    kl_terms(q, prior, a, b, KL_ORDER, true)
}

fn kl_terms(
    (mu, sigma): (f64, f64),
    prior: &CensoringPrior,
    a: f64,
    b: f64,
    order: usize,
    with_grad: bool,
) -> Result<(f64, f64, f64)> {
    prior.validate()?;
    let ln_prior_mass = prior.ln_interval_mass(a, b)?;
    let q = TruncatedNormal::new(mu, sigma, a, b)?;
    let mass = q.mass();
    if !(mass > 0.0) {
        return Err(Error::DegenerateTruncation { mass });
    }
    let ln_q_norm = -sigma.ln() - crate::special::LN_SQRT_2PI - mass.ln();
    let (lo, hi) = q.support_window(KL_WINDOW);
    if !(hi > lo) {
        return Err(Error::DegenerateTruncation { mass });
    }
    let log_ratio = |x: f64| {
        let t = (x - mu) / sigma;
        let ln_q = -0.5 * t * t + ln_q_norm;
        (ln_q, ln_q - (prior.ln_density_untruncated(x) - ln_prior_mass))
    };
    let kl = gauss_legendre(order, lo, hi, |x| {
        let (ln_q, r) = log_ratio(x);
        ln_q.exp() * r
    });
    if !with_grad {
        return Ok((kl, 0.0, 0.0));
    }
    // d KL = E_q[d ln q * (ln q - ln p)]
    let (dz_mu, dz_sigma) = q.ln_mass_grad();
    let d_mu = gauss_legendre(order, lo, hi, |x| {
        let (ln_q, r) = log_ratio(x);
        ln_q.exp() * r * ((x - mu) / (sigma * sigma) - dz_mu)
    });
    let d_sigma = gauss_legendre(order, lo, hi, |x| {
        let (ln_q, r) = log_ratio(x);
        let t = (x - mu) / sigma;
        ln_q.exp() * r * ((t * t - 1.0) / sigma - dz_sigma)
    });
    Ok((kl, d_mu, d_sigma))
}
