//! Closed-form integrals of the one-dimensional squared exponential kernel
//! and the kernel of a GP conditioned to integrate to zero over a domain.
//!
//! With `k(x, y) = s2 exp(-(x - y)^2 / (2 l^2))` on `[a, b]`:
//!
//! ```text
//! I(x) = int_a^b k(x, t) dt
//!      = 0.5 sqrt(2 pi) l s2 (erf((b - x) / (sqrt2 l)) - erf((a - x) / (sqrt2 l)))
//! D    = int_a^b int_a^b k(t, s) dt ds
//!      = sqrt(2 pi) l s2 ((a - b) erf((a - b) / (sqrt2 l))
//!                          + sqrt(2 / pi) l (exp(-(b - a)^2 / (2 l^2)) - 1))
//! k~(x, y) = k(x, y) - I(x) I(y) / D
//! ```

use serde::{Deserialize, Serialize};
use libm::erf;
use std::f64::consts::{PI, SQRT_2};

use super::se::SeArdParams;
use crate::error::{Error, Result};
use crate::special::erf_diff;

/// Smallest double integral accepted before the mean-zero correction is
/// declared degenerate.
pub const DOUBLE_INTEGRAL_FLOOR: f64 = 1e-300;

/// The interval `[lower, upper]` over which mean-zero constraints hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct IntegrationDomain {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDomain {
    lower: f64,
    upper: f64,
}

impl TryFrom<RawDomain> for IntegrationDomain {
    type Error = Error;
    fn try_from(raw: RawDomain) -> Result<Self> {
        IntegrationDomain::new(raw.lower, raw.upper)
    }
}

impl From<IntegrationDomain> for RawDomain {
    fn from(d: IntegrationDomain) -> Self {
        RawDomain { lower: d.lower, upper: d.upper }
    }
}

impl IntegrationDomain {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::invalid(format!("integration domain [{lower}, {upper}] must be finite")));
        }
        if lower >= upper {
            return Err(Error::invalid(format!("integration domain requires lower < upper, got [{lower}, {upper}]")));
        }
        Ok(IntegrationDomain { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    /// `n` evenly spaced points from `lower` to `upper` inclusive.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lower + self.upper)],
            _ => (0..n)
                .map(|i| self.lower + self.width() * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl Default for IntegrationDomain {
    /// `[-3, 3]`: three standard deviations of standardized inputs.
    fn default() -> Self {
        IntegrationDomain { lower: -3.0, upper: 3.0 }
    }
}

/// `int_a^b k(x, t) dt` for a one-dimensional SE kernel.
pub fn se_single_integral(x: f64, d: &IntegrationDomain, p: &SeArdParams) -> Result<f64> {
    let l = p.scalar_lengthscale()?;
    Ok(p.variance * unit_single_integral(x, d.lower, d.upper, l))
}

/// `int_a^b int_a^b k(t, s) dt ds` for a one-dimensional SE kernel.
pub fn se_double_integral(d: &IntegrationDomain, p: &SeArdParams) -> Result<f64> {
    let l = p.scalar_lengthscale()?;
    Ok(p.variance * unit_double_integral(d.lower, d.upper, l))
}

/// Unit-variance mean-zero SE kernel `k~(x, y)`. Inputs outside the domain
/// are allowed; the expression stays well defined there.
pub fn mean_zero_se(x: f64, y: f64, d: &IntegrationDomain, lengthscale: f64) -> Result<f64> {
    let basis = MeanZeroBasis::new(d, lengthscale)?;
    Ok(basis.eval(x, y))
}

fn unit_single_integral(x: f64, a: f64, b: f64, l: f64) -> f64 {
    let s = SQRT_2 * l;
    (PI / 2.0).sqrt() * l * erf_diff((a - x) / s, (b - x) / s)
}

fn unit_double_integral(a: f64, b: f64, l: f64) -> f64 {
    let delta = b - a;
    let r = delta / (SQRT_2 * l);
    // (a - b) erf((a - b)/(sqrt2 l)) == delta erf(r); expm1 keeps the long
    // lengthscale limit (value -> delta^2) accurate.
    (2.0 * PI).sqrt() * l * delta * erf(r) + 2.0 * l * l * (-r * r).exp_m1()
}

/// Precomputed pieces of the unit-variance mean-zero kernel for one
/// lengthscale on one domain.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MeanZeroBasis {
    lower: f64,
    upper: f64,
    l: f64,
    double: f64,
    d_double_dl: f64,
}

/// `I(x)` together with its derivatives in `x` and in the lengthscale.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IntegralTerms {
    pub value: f64,
    pub d_x: f64,
    pub d_l: f64,
}

impl MeanZeroBasis {
    pub fn new(d: &IntegrationDomain, l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {l}")));
        }
        let double = unit_double_integral(d.lower, d.upper, l);
        if !(double >= DOUBLE_INTEGRAL_FLOOR) {
            return Err(Error::DegenerateLengthscale { lengthscale: l, lower: d.lower, upper: d.upper });
        }
        let r = d.width() / (SQRT_2 * l);
        let d_double_dl = double / l + 2.0 * l * (-r * r).exp_m1();
        Ok(MeanZeroBasis { lower: d.lower, upper: d.upper, l, double, d_double_dl })
    }

    pub fn integral(&self, x: f64) -> f64 {
        unit_single_integral(x, self.lower, self.upper, self.l)
    }

    pub fn integral_terms(&self, x: f64) -> IntegralTerms {
        let l = self.l;
        let value = self.integral(x);
        let alpha = (self.lower - x) / (SQRT_2 * l);
        let beta = (self.upper - x) / (SQRT_2 * l);
        let ea = (-alpha * alpha).exp();
        let eb = (-beta * beta).exp();
        IntegralTerms {
            value,
            d_x: ea - eb,
            d_l: value / l + SQRT_2 * (alpha * ea - beta * eb),
        }
    }

    pub fn double_integral(&self) -> f64 {
        self.double
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = (x - y) / self.l;
        (-0.5 * r * r).exp() - self.integral(x) * self.integral(y) / self.double
    }

    /// Value, derivative in the first argument, and derivative in the
    /// lengthscale, given precomputed integral terms for both arguments.
    pub fn eval_with_grad(&self, x: f64, y: f64, ix: &IntegralTerms, iy: &IntegralTerms) -> (f64, f64, f64) {
        let l = self.l;
        let diff = x - y;
        let e = (-0.5 * diff * diff / (l * l)).exp();
        let prod = ix.value * iy.value;
        let value = e - prod / self.double;
        let d_first = -diff / (l * l) * e - ix.d_x * iy.value / self.double;
        let d_l = diff * diff / (l * l * l) * e - (ix.d_l * iy.value + ix.value * iy.d_l) / self.double
            + prod * self.d_double_dl / (self.double * self.double);
        (value, d_first, d_l)
    }
}
