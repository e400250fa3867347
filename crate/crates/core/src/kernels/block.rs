//! Unit-variance Gram matrices of one input block (latent or covariate),
//! built as products of one-dimensional kernels.

use nalgebra::DMatrix;

use super::mean_zero::{IntegralTerms, IntegrationDomain, MeanZeroBasis};
use crate::error::{Error, Result};

/// The one-dimensional kernel used inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BaseKernel {
    Se,
    MeanZero,
}

/// Gram matrix of a block with optional derivatives.
///
/// `d_lengthscale[d]` is `dG / dl_d`. `d_first[d][(i, j)]` is the derivative
/// of `G_ij` with respect to dimension `d` of point `i` only.
#[derive(Debug, Clone)]
pub(crate) struct BlockGram {
    pub value: DMatrix<f64>,
    pub d_lengthscale: Vec<DMatrix<f64>>,
    pub d_first: Vec<DMatrix<f64>>,
}

impl BlockGram {
    pub fn ones(n: usize) -> Self {
        BlockGram { value: DMatrix::from_element(n, n, 1.0), d_lengthscale: Vec::new(), d_first: Vec::new() }
    }
}

enum Dim {
    Se(f64),
    MeanZero(MeanZeroBasis),
}

impl Dim {
    fn new(base: BaseKernel, l: f64, domain: &IntegrationDomain) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
        }
        Ok(match base {
            BaseKernel::Se => Dim::Se(l),
            BaseKernel::MeanZero => Dim::MeanZero(MeanZeroBasis::new(domain, l)?),
        })
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Dim::Se(l) => {
                let r = (x - y) / l;
                (-0.5 * r * r).exp()
            }
            Dim::MeanZero(b) => b.eval(x, y),
        }
    }
}

fn check_dims(points: &DMatrix<f64>, lengthscales: &[f64]) -> Result<()> {
    if points.ncols() != lengthscales.len() {
        return Err(Error::invalid(format!(
            "inputs have {} dimensions but {} lengthscales were given",
            points.ncols(),
            lengthscales.len()
        )));
    }
    Ok(())
}

/// One-dimensional Gram with derivatives in the first argument and the
/// lengthscale.
fn dim_gram(col: &[f64], dim: &Dim) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = col.len();
    let mut value = DMatrix::zeros(n, n);
    let mut d_first = DMatrix::zeros(n, n);
    let mut d_l = DMatrix::zeros(n, n);
    match dim {
        Dim::Se(l) => {
            let l2 = l * l;
            for j in 0..n {
                for i in j..n {
                    let diff = col[i] - col[j];
                    let e = (-0.5 * diff * diff / l2).exp();
                    let dl = diff * diff / (l2 * l) * e;
                    let df = -diff / l2 * e;
                    value[(i, j)] = e;
                    value[(j, i)] = e;
                    d_l[(i, j)] = dl;
                    d_l[(j, i)] = dl;
                    d_first[(i, j)] = df;
                    d_first[(j, i)] = -df;
                }
            }
        }
        Dim::MeanZero(b) => {
            let terms: Vec<IntegralTerms> = col.iter().map(|x| b.integral_terms(*x)).collect();
            for j in 0..n {
                for i in j..n {
                    let (v, df, dl) = b.eval_with_grad(col[i], col[j], &terms[i], &terms[j]);
                    value[(i, j)] = v;
                    value[(j, i)] = v;
                    d_l[(i, j)] = dl;
                    d_l[(j, i)] = dl;
                    d_first[(i, j)] = df;
                    if i != j {
                        let (_, df_rev, _) = b.eval_with_grad(col[j], col[i], &terms[j], &terms[i]);
                        d_first[(j, i)] = df_rev;
                    }
                }
            }
        }
    }
    (value, d_first, d_l)
}

/// Gram matrix of `points` (N x D) under the product kernel.
pub(crate) fn block_gram(
    points: &DMatrix<f64>,
    lengthscales: &[f64],
    base: BaseKernel,
    domain: &IntegrationDomain,
    with_grad: bool,
) -> Result<BlockGram> {
    check_dims(points, lengthscales)?;
    let n = points.nrows();
    let dims = lengthscales.iter().map(|l| Dim::new(base, *l, domain)).collect::<Result<Vec<_>>>()?;
    let per_dim: Vec<_> = dims
        .iter()
        .enumerate()
        .map(|(d, dim)| dim_gram(points.column(d).as_slice(), dim))
        .collect();
    let mut value = DMatrix::from_element(n, n, 1.0);
    for (v, _, _) in &per_dim {
        value.component_mul_assign(v);
    }
    if !with_grad {
        return Ok(BlockGram { value, d_lengthscale: Vec::new(), d_first: Vec::new() });
    }
    let mut d_lengthscale = Vec::with_capacity(dims.len());
    let mut d_first = Vec::with_capacity(dims.len());
    for d in 0..dims.len() {
        // product of the other dimensions; computed directly since factors may vanish
        let mut others = DMatrix::from_element(n, n, 1.0);
        for (e, (v, _, _)) in per_dim.iter().enumerate() {
            if e != d {
                others.component_mul_assign(v);
            }
        }
        d_lengthscale.push(others.component_mul(&per_dim[d].2));
        d_first.push(others.component_mul(&per_dim[d].1));
    }
    Ok(BlockGram { value, d_lengthscale, d_first })
}

/// Cross Gram `G_ij = g(a_i, b_j)`.
pub(crate) fn block_cross(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lengthscales: &[f64],
    base: BaseKernel,
    domain: &IntegrationDomain,
) -> Result<DMatrix<f64>> {
    check_dims(a, lengthscales)?;
    check_dims(b, lengthscales)?;
    let mut out = DMatrix::from_element(a.nrows(), b.nrows(), 1.0);
    for (d, l) in lengthscales.iter().enumerate() {
        let dim = Dim::new(base, *l, domain)?;
        match &dim {
            Dim::MeanZero(basis) => {
                let ia: Vec<f64> = a.column(d).iter().map(|x| basis.integral(*x)).collect();
                let ib: Vec<f64> = b.column(d).iter().map(|x| basis.integral(*x)).collect();
                let dd = basis.double_integral();
                for j in 0..b.nrows() {
                    for i in 0..a.nrows() {
                        let r = (a[(i, d)] - b[(j, d)]) / l;
                        out[(i, j)] *= (-0.5 * r * r).exp() - ia[i] * ib[j] / dd;
                    }
                }
            }
            Dim::Se(_) => {
                for j in 0..b.nrows() {
                    for i in 0..a.nrows() {
                        out[(i, j)] *= dim.eval(a[(i, d)], b[(j, d)]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `g(a_i, a_i)` for each row.
pub(crate) fn block_diag(
    a: &DMatrix<f64>,
    lengthscales: &[f64],
    base: BaseKernel,
    domain: &IntegrationDomain,
) -> Result<Vec<f64>> {
    check_dims(a, lengthscales)?;
    let mut out = vec![1.0; a.nrows()];
    for (d, l) in lengthscales.iter().enumerate() {
        let dim = Dim::new(base, *l, domain)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o *= dim.eval(a[(i, d)], a[(i, d)]);
        }
    }
    Ok(out)
}
