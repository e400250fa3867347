//! Normal distribution truncated to an interval: reparameterized sampling
//! with pathwise gradients, moments, and quantiles.

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::special::{norm_cdf, norm_interval_mass, norm_isf, norm_ppf, norm_sf, LN_SQRT_2PI};

/// Interval mass below which the reparameterized sampler refuses to run.
pub const SAMPLER_MASS_FLOOR: f64 = 1e-12;
/// Below this mass the analytic moment formulas lose all precision and the
/// summaries fall back to quadrature.
const ANALYTIC_MASS_FLOOR: f64 = 1e-280;

/// `N(mu, sigma^2)` restricted to `[lower, upper]`; `upper` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `phi(t)` with the convention `phi(+-inf) = 0` and `t phi(t) -> 0`.
fn phi(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        (-0.5 * t * t - LN_SQRT_2PI).exp()
    }
}

fn t_phi(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        t * phi(t)
    }
}

/// `phi(t) / phi(w)` computed without underflow.
fn phi_ratio(t: f64, w: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        (0.5 * (w * w - t * t)).exp()
    }
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("truncated normal needs finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        if !lower.is_finite() || upper.is_nan() || lower >= upper {
            return Err(Error::invalid(format!("truncation interval [{lower}, {upper}] is empty or invalid")));
        }
        Ok(TruncatedNormal { mu, sigma, lower, upper })
    }

    /// Standardized bounds `(alpha, beta)`.
    pub fn standardized(&self) -> (f64, f64) {
        ((self.lower - self.mu) / self.sigma, (self.upper - self.mu) / self.sigma)
    }

    /// Probability mass of the untruncated normal inside the interval.
    pub fn mass(&self) -> f64 {
        let (a, b) = self.standardized();
        norm_interval_mass(a, b)
    }

    fn check_sampler_mass(&self) -> Result<f64> {
        let m = self.mass();
        if !(m >= SAMPLER_MASS_FLOOR) {
            return Err(Error::DegenerateTruncation { mass: m });
        }
        Ok(m)
    }

    /// Standardized quantile `w` with `x = mu + sigma w`. Uses the survival
    /// function when the interval lies in the upper tail.
    fn standard_quantile(&self, u: f64) -> f64 {
        let (a, b) = self.standardized();
        if a > 0.0 {
            let sa = norm_sf(a);
            let sb = norm_sf(b);
            norm_isf(sa - u * (sa - sb))
        } else {
            let fa = norm_cdf(a);
            let fb = norm_cdf(b);
            norm_ppf(fa + u * (fb - fa))
        }
    }

    /// Reparameterized draw for a uniform variate `u`: the `u`-quantile.
    /// `u = 0` and `u = 1` map exactly to the bounds.
    pub fn sample(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("uniform variate must lie in [0, 1], got {u}")));
        }
        self.check_sampler_mass()?;
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.lower;
        }
        if u == 1.0 {
            return self.upper;
        }
        let x = self.mu + self.sigma * self.standard_quantile(u);
        x.clamp(self.lower, self.upper)
    }

    /// Draw together with `dx/dmu` and `dx/dsigma` at fixed `u`.
    pub fn sample_with_grad(&self, u: f64) -> Result<(f64, f64, f64)> {
        let x = self.sample(u)?;
        if u == 0.0 || u == 1.0 {
            // the bounds do not move with (mu, sigma)
            return Ok((x, 0.0, 0.0));
        }
        let (a, b) = self.standardized();
        let w = (x - self.mu) / self.sigma;
        let ra = (1.0 - u) * phi_ratio(a, w);
        let rb = if b.is_infinite() { 0.0 } else { u * phi_ratio(b, w) };
        let d_mu = 1.0 - ra - rb;
        let d_sigma = w - ra * a - if b.is_infinite() { 0.0 } else { rb * b };
        Ok((x, d_mu, d_sigma))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return f64::NEG_INFINITY;
        }
        let t = (x - self.mu) / self.sigma;
        -0.5 * t * t - LN_SQRT_2PI - self.sigma.ln() - self.mass().ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let (a, _) = self.standardized();
        let t = (x - self.mu) / self.sigma;
        (norm_interval_mass(a, t) / self.mass()).clamp(0.0, 1.0)
    }

    /// `p`-quantile. Degenerate intervals fall back to the quadrature CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if self.mass() >= SAMPLER_MASS_FLOOR {
            return self.quantile_unchecked(p);
        }
        let (lo, hi) = self.support_window(40.0);
        let (xs, cdf) = self.numeric_cdf(lo, hi);
        if !cdf[cdf.len() - 1].is_finite() {
            return self.tail_quantile(p);
        }
        let k = cdf.partition_point(|c| *c < p).min(xs.len() - 1);
        if k == 0 {
            return xs[0];
        }
        let (c0, c1) = (cdf[k - 1], cdf[k]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        xs[k - 1] + t * (xs[k] - xs[k - 1])
    }

    /// Window `[max(a, mu - m sigma), min(b, max(mu, a) + m sigma)]` holding
    /// essentially all of the mass.
    pub fn support_window(&self, m: f64) -> (f64, f64) {
        let lo = self.lower.max(self.mu - m * self.sigma);
        let hi = self.upper.min(self.mu.max(self.lower) + m * self.sigma);
        (lo, hi.max(lo))
    }

    fn unnormalized_log_density(&self, x: f64) -> f64 {
        let t = (x - self.mu) / self.sigma;
        -0.5 * t * t
    }

    fn numeric_cdf(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let n = 4001;
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let peak = xs.iter().map(|x| self.unnormalized_log_density(*x)).fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = xs.iter().map(|x| (self.unnormalized_log_density(*x) - peak).exp()).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        (xs, cdf)
    }

    /// Mean and variance.
    pub fn moments(&self) -> (f64, f64) {
        let z = self.mass();
        if z > ANALYTIC_MASS_FLOOR {
            let (a, b) = self.standardized();
            let ratio = (phi(a) - phi(b)) / z;
            let mean = self.mu + self.sigma * ratio;
            let var = self.sigma * self.sigma * (1.0 + (t_phi(a) - t_phi(b)) / z - ratio * ratio);
            if mean.is_finite() && var.is_finite() && var >= 0.0 {
                return (mean.clamp(self.lower, self.upper), var);
            }
        }
        self.quadrature_moments()
    }

    fn quadrature_moments(&self) -> (f64, f64) {
        let (lo, hi) = self.support_window(40.0);
        if hi - lo <= 0.0 {
            return (lo, 0.0);
        }
        let peak = self.unnormalized_log_density(self.mu.clamp(lo, hi));
        let w = |x: f64| (self.unnormalized_log_density(x) - peak).exp();
        let m0 = gauss_legendre(200, lo, hi, w);
        if !(m0 > 0.0 && m0.is_finite()) {
            return self.tail_moments();
        }
        let m1 = gauss_legendre(200, lo, hi, |x| x * w(x)) / m0;
        let m2 = gauss_legendre(200, lo, hi, |x| (x - m1) * (x - m1) * w(x)) / m0;
        (m1.clamp(self.lower, self.upper), m2.max(0.0))
    }

    /// Exponential approximation when the mass sits against one bound at a
    /// scale far below `sigma`.
    fn tail_moments(&self) -> (f64, f64) {
        let (a, b) = self.standardized();
        if a > 0.0 {
            let s = self.sigma / a;
            ((self.lower + s).min(self.upper), s * s)
        } else if b < 0.0 {
            let s = self.sigma / -b;
            ((self.upper - s).max(self.lower), s * s)
        } else {
            (self.mu, self.sigma * self.sigma)
        }
    }

    fn tail_quantile(&self, p: f64) -> f64 {
        let (a, b) = self.standardized();
        if a > 0.0 {
            (self.lower - self.sigma / a * (-p).ln_1p()).min(self.upper)
        } else if b < 0.0 {
            (self.upper + self.sigma / -b * p.ln()).max(self.lower)
        } else {
            self.mu.clamp(self.lower, self.upper)
        }
    }

    /// Derivatives of `ln(mass)` with respect to `mu` and `sigma`.
    pub(crate) fn ln_mass_grad(&self) -> (f64, f64) {
        let (a, b) = self.standardized();
        let z = self.mass();
        ((phi(a) - phi(b)) / (self.sigma * z), (t_phi(a) - t_phi(b)) / (self.sigma * z))
    }
}

/// Reparameterized truncated-normal draw `mu + sigma Phi^{-1}(F(a) + u (F(b) - F(a)))`.
pub fn sample_trunc_normal(mu: f64, sigma: f64, lower: f64, upper: f64, u: f64) -> Result<f64> {
    TruncatedNormal::new(mu, sigma, lower, upper)?.sample(u)
}
