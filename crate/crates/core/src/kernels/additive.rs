//! Kernels on the joint (latent, covariate) input space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::block::{block_cross, block_diag, block_gram, BaseKernel, BlockGram};
use super::mean_zero::IntegrationDomain;
use crate::error::{Error, Result};

/// One additive part of the ADD+INT kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Bias,
    Z,
    X,
    Zx,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Bias, Component::Z, Component::X, Component::Zx];

    fn bit(self) -> u8 {
        match self {
            Component::Bias => 1,
            Component::Z => 2,
            Component::X => 4,
            Component::Zx => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Bias => "bias",
            Component::Z => "z",
            Component::X => "x",
            Component::Zx => "zx",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of [`Component`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Component>", into = "Vec<Component>")]
pub struct ComponentMask(u8);

impl ComponentMask {
    pub const EMPTY: ComponentMask = ComponentMask(0);
    pub const FULL: ComponentMask = ComponentMask(15);

    pub fn only(c: Component) -> Self {
        ComponentMask(c.bit())
    }

    pub fn with(self, c: Component) -> Self {
        ComponentMask(self.0 | c.bit())
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Component> {
        Component::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromIterator<Component> for ComponentMask {
    fn from_iter<I: IntoIterator<Item = Component>>(iter: I) -> Self {
        iter.into_iter().fold(ComponentMask::EMPTY, ComponentMask::with)
    }
}

impl From<Vec<Component>> for ComponentMask {
    fn from(v: Vec<Component>) -> Self {
        v.into_iter().collect()
    }
}

impl From<ComponentMask> for Vec<Component> {
    fn from(m: ComponentMask) -> Self {
        m.iter().collect()
    }
}

/// Which kernel family a model uses.
///
/// * `SeArd`: `s2_z SE(z, z')`, the plain GPLVM kernel (covariates ignored).
/// * `Add`: `s2_z SE(z, z') + s2_x SE(x, x')`.
/// * `Int`: `s2_zx SE((z, x), (z', x'))`, one ARD kernel on the joint space.
/// * `AddInt(mask)`: the masked sum of
///   `s2_b + s2_z k~(z, z') + s2_x k~(x, x') + s2_zx k~(z, z') k~(x, x')`
///   built from mean-zero kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "mask", rename_all = "snake_case")]
pub enum KernelKind {
    SeArd,
    Add,
    Int,
    AddInt(ComponentMask),
}

impl KernelKind {
    /// ADD+INT with every component switched on.
    pub fn add_int() -> Self {
        KernelKind::AddInt(ComponentMask::FULL)
    }

    pub fn components(&self) -> ComponentMask {
        match self {
            KernelKind::SeArd => ComponentMask::only(Component::Z),
            KernelKind::Add => ComponentMask::only(Component::Z).with(Component::X),
            KernelKind::Int => ComponentMask::only(Component::Zx),
            KernelKind::AddInt(mask) => *mask,
        }
    }

    pub(crate) fn base(&self) -> BaseKernel {
        match self {
            KernelKind::AddInt(_) => BaseKernel::MeanZero,
            _ => BaseKernel::Se,
        }
    }

    /// Whether the kernel reads the covariate block at all.
    pub fn uses_covariates(&self) -> bool {
        let m = self.components();
        m.contains(Component::X) || m.contains(Component::Zx)
    }

    pub fn uses_latent(&self) -> bool {
        let m = self.components();
        m.contains(Component::Z) || m.contains(Component::Zx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components().is_empty() {
            return Err(Error::invalid("ADD+INT kernel needs a non-empty component mask"));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::SeArd => "se_ard",
            KernelKind::Add => "add",
            KernelKind::Int => "int",
            KernelKind::AddInt(_) => "add_int",
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "se_ard" | "se" => Ok(KernelKind::SeArd),
            "add" => Ok(KernelKind::Add),
            "int" => Ok(KernelKind::Int),
            "add_int" | "add+int" => Ok(KernelKind::add_int()),
            other => Err(Error::invalid(format!("unknown kernel kind '{other}'"))),
        }
    }
}

/// Variances and lengthscales for the joint-space kernels. Kernel kinds that
/// do not use a component ignore its variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddIntParams {
    pub bias_variance: f64,
    pub z_variance: f64,
    pub x_variance: f64,
    pub zx_variance: f64,
    pub z_lengthscales: Vec<f64>,
    pub x_lengthscales: Vec<f64>,
    pub domain: IntegrationDomain,
}

impl AddIntParams {
    pub fn variance(&self, c: Component) -> f64 {
        match c {
            Component::Bias => self.bias_variance,
            Component::Z => self.z_variance,
            Component::X => self.x_variance,
            Component::Zx => self.zx_variance,
        }
    }

    pub fn set_variance(&mut self, c: Component, v: f64) {
        match c {
            Component::Bias => self.bias_variance = v,
            Component::Z => self.z_variance = v,
            Component::X => self.x_variance = v,
            Component::Zx => self.zx_variance = v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Component::ALL {
            let v = self.variance(c);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{c} variance must be non-negative, got {v}")));
            }
        }
        for l in self.z_lengthscales.iter().chain(&self.x_lengthscales) {
            if !(*l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// N points in the joint space: latent rows `z` (N x Q) and covariate rows
/// `x` (N x C), both already in kernel units.
#[derive(Debug, Clone, PartialEq)]
pub struct JointInputs {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl JointInputs {
    pub fn new(z: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != x.nrows() {
            return Err(Error::invalid(format!(
                "latent block has {} rows but covariate block has {}",
                z.nrows(),
                x.nrows()
            )));
        }
        Ok(JointInputs { z, x })
    }

    /// Build from a list of `(z, x)` points.
    pub fn from_points(points: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let (q, c) = points.first().map(|(z, x)| (z.len(), x.len())).unwrap_or((0, 0));
        if points.iter().any(|(z, x)| z.len() != q || x.len() != c) {
            return Err(Error::invalid("joint inputs have inconsistent dimensions"));
        }
        let z = DMatrix::from_fn(points.len(), q, |i, d| points[i].0[d]);
        let x = DMatrix::from_fn(points.len(), c, |i, d| points[i].1[d]);
        Ok(JointInputs { z, x })
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn c(&self) -> usize {
        self.x.ncols()
    }

    fn check(&self, p: &AddIntParams, kind: &KernelKind) -> Result<()> {
        kind.validate()?;
        p.validate()?;
        if kind.uses_latent() && self.q() != p.z_lengthscales.len() {
            return Err(Error::invalid(format!(
                "latent inputs have {} dimensions but {} z-lengthscales were given",
                self.q(),
                p.z_lengthscales.len()
            )));
        }
        if kind.uses_covariates() && self.c() != p.x_lengthscales.len() {
            return Err(Error::invalid(format!(
                "covariate inputs have {} dimensions but {} x-lengthscales were given",
                self.c(),
                p.x_lengthscales.len()
            )));
        }
        Ok(())
    }
}

/// ADD+INT kernel value between two joint points, restricted to `mask`.
pub fn add_int_kernel(
    a: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
    p: &AddIntParams,
    mask: ComponentMask,
) -> Result<f64> {
    kernel(a, b, p, &KernelKind::AddInt(mask))
}

/// Kernel value between two joint points.
pub fn kernel(a: (&[f64], &[f64]), b: (&[f64], &[f64]), p: &AddIntParams, kind: &KernelKind) -> Result<f64> {
    if a.0.len() != b.0.len() || a.1.len() != b.1.len() {
        return Err(Error::invalid("joint points have different dimensions"));
    }
    let left = JointInputs::from_points(&[(a.0.to_vec(), a.1.to_vec())])?;
    let right = JointInputs::from_points(&[(b.0.to_vec(), b.1.to_vec())])?;
    let k = cross_gram(&left, &right, p, kind, kind.components())?;
    Ok(k[(0, 0)])
}

/// Unit-variance Gram matrices of the latent and covariate blocks.
pub(crate) struct UnitGrams {
    pub z: BlockGram,
    pub x: BlockGram,
}

impl UnitGrams {
    pub fn new(points: &JointInputs, p: &AddIntParams, kind: &KernelKind, with_grad: bool) -> Result<Self> {
        let base = kind.base();
        let n = points.len();
        let z = if kind.uses_latent() {
            block_gram(&points.z, &p.z_lengthscales, base, &p.domain, with_grad)?
        } else {
            BlockGram::ones(n)
        };
        let x = if kind.uses_covariates() {
            block_gram(&points.x, &p.x_lengthscales, base, &p.domain, with_grad)?
        } else {
            BlockGram::ones(n)
        };
        Ok(UnitGrams { z, x })
    }

    /// Unit-variance Gram of one component.
    pub fn component(&self, c: Component) -> DMatrix<f64> {
        match c {
            Component::Bias => DMatrix::from_element(self.z.value.nrows(), self.z.value.ncols(), 1.0),
            Component::Z => self.z.value.clone(),
            Component::X => self.x.value.clone(),
            Component::Zx => self.z.value.component_mul(&self.x.value),
        }
    }
}

/// Gram matrix `K_ij = k(point_i, point_j)`.
pub fn gram(points: &JointInputs, p: &AddIntParams, kind: &KernelKind) -> Result<DMatrix<f64>> {
    masked_gram(points, p, kind, kind.components())
}

/// Gram matrix of a single component (including its variance).
pub fn component_gram(points: &JointInputs, p: &AddIntParams, kind: &KernelKind, c: Component) -> Result<DMatrix<f64>> {
    masked_gram(points, p, kind, ComponentMask::only(c))
}

fn masked_gram(points: &JointInputs, p: &AddIntParams, kind: &KernelKind, mask: ComponentMask) -> Result<DMatrix<f64>> {
    points.check(p, kind)?;
    let grams = UnitGrams::new(points, p, kind, false)?;
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for c in mask.iter().filter(|c| kind.components().contains(*c)) {
        k += grams.component(c) * p.variance(c);
    }
    Ok(k)
}

/// Cross-covariance `K_ij = k_mask(a_i, b_j)`.
pub fn cross_gram(
    a: &JointInputs,
    b: &JointInputs,
    p: &AddIntParams,
    kind: &KernelKind,
    mask: ComponentMask,
) -> Result<DMatrix<f64>> {
    a.check(p, kind)?;
    b.check(p, kind)?;
    let base = kind.base();
    let (n, m) = (a.len(), b.len());
    let active = kind.components();
    let needs_z = mask.contains(Component::Z) || mask.contains(Component::Zx);
    let needs_x = mask.contains(Component::X) || mask.contains(Component::Zx);
    let kz = if needs_z && kind.uses_latent() {
        block_cross(&a.z, &b.z, &p.z_lengthscales, base, &p.domain)?
    } else {
        DMatrix::from_element(n, m, 1.0)
    };
    let kx = if needs_x && kind.uses_covariates() {
        block_cross(&a.x, &b.x, &p.x_lengthscales, base, &p.domain)?
    } else {
        DMatrix::from_element(n, m, 1.0)
    };
    let mut k = DMatrix::zeros(n, m);
    for c in mask.iter().filter(|c| active.contains(*c)) {
        let part = match c {
            Component::Bias => DMatrix::from_element(n, m, 1.0),
            Component::Z => kz.clone(),
            Component::X => kx.clone(),
            Component::Zx => kz.component_mul(&kx),
        };
        k += part * p.variance(c);
    }
    Ok(k)
}

/// Prior variance `k_mask(a_i, a_i)` at each point.
pub fn kernel_diag(a: &JointInputs, p: &AddIntParams, kind: &KernelKind, mask: ComponentMask) -> Result<Vec<f64>> {
    a.check(p, kind)?;
    let base = kind.base();
    let n = a.len();
    let active = kind.components();
    let dz = if kind.uses_latent() {
        block_diag(&a.z, &p.z_lengthscales, base, &p.domain)?
    } else {
        vec![1.0; n]
    };
    let dx = if kind.uses_covariates() {
        block_diag(&a.x, &p.x_lengthscales, base, &p.domain)?
    } else {
        vec![1.0; n]
    };
    Ok((0..n)
        .map(|i| {
            mask.iter()
                .filter(|c| active.contains(*c))
                .map(|c| {
                    p.variance(c)
                        * match c {
                            Component::Bias => 1.0,
                            Component::Z => dz[i],
                            Component::X => dx[i],
                            Component::Zx => dz[i] * dx[i],
                        }
                })
                .sum()
        })
        .collect())
}

/// A hyperparameter of the joint kernel, differentiated in log space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperParam {
    Variance(Component),
    ZLengthscale(usize),
    XLengthscale(usize),
}

/// Derivatives of a Gram matrix.
///
/// `log_params` holds `dK / d log(theta)` for every hyperparameter the kernel
/// kind depends on. Input derivatives are stored compactly: entry `(i, j)` of
/// `z_first[d]` is `d k(p_i, p_j) / d z_i[d]`; [`GramGradients::wrt_z`]
/// expands it to the full `dK / d z_i[d]`.
#[derive(Debug, Clone)]
pub struct GramGradients {
    pub log_params: Vec<(HyperParam, DMatrix<f64>)>,
    pub z_first: Vec<DMatrix<f64>>,
    pub x_first: Vec<DMatrix<f64>>,
}

impl GramGradients {
    pub fn param(&self, which: HyperParam) -> Option<&DMatrix<f64>> {
        self.log_params.iter().find(|(h, _)| *h == which).map(|(_, m)| m)
    }

    pub fn wrt_z(&self, i: usize, d: usize) -> DMatrix<f64> {
        expand_first_arg(&self.z_first[d], i)
    }

    pub fn wrt_x(&self, i: usize, d: usize) -> DMatrix<f64> {
        expand_first_arg(&self.x_first[d], i)
    }
}

fn expand_first_arg(first: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let n = first.nrows();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(i, j)] = first[(i, j)];
        m[(j, i)] = first[(i, j)];
    }
    m[(i, i)] = 2.0 * first[(i, i)];
    m
}

/// Gram matrix derivatives with respect to log-hyperparameters and inputs.
pub fn gram_gradients(points: &JointInputs, p: &AddIntParams, kind: &KernelKind) -> Result<GramGradients> {
    points.check(p, kind)?;
    let g = UnitGrams::new(points, p, kind, true)?;
    let mask = kind.components();
    let mut log_params = Vec::new();
    for c in mask.iter() {
        log_params.push((HyperParam::Variance(c), g.component(c) * p.variance(c)));
    }

    // d/dz terms come from the Z component and the Z factor of ZX; likewise x.
    let z_weight = |dz: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(dz.nrows(), dz.ncols());
        if mask.contains(Component::Z) {
            out += dz * p.z_variance;
        }
        if mask.contains(Component::Zx) {
            out += dz.component_mul(&g.x.value) * p.zx_variance;
        }
        out
    };
    let x_weight = |dx: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(dx.nrows(), dx.ncols());
        if mask.contains(Component::X) {
            out += dx * p.x_variance;
        }
        if mask.contains(Component::Zx) {
            out += dx.component_mul(&g.z.value) * p.zx_variance;
        }
        out
    };

    let mut z_first = Vec::new();
    if kind.uses_latent() {
        for (d, dl) in g.z.d_lengthscale.iter().enumerate() {
            log_params.push((HyperParam::ZLengthscale(d), z_weight(dl) * p.z_lengthscales[d]));
        }
        z_first = g.z.d_first.iter().map(z_weight).collect();
    }
    let mut x_first = Vec::new();
    if kind.uses_covariates() {
        for (d, dl) in g.x.d_lengthscale.iter().enumerate() {
            log_params.push((HyperParam::XLengthscale(d), x_weight(dl) * p.x_lengthscales[d]));
        }
        x_first = g.x.d_first.iter().map(x_weight).collect();
    }
    Ok(GramGradients { log_params, z_first, x_first })
}
