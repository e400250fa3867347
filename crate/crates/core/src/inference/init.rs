use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Dataset, LatentState, ModelConfig};

/// Standard deviation of the noise added to the PCA coordinates.
const INIT_JITTER_STD: f64 = 0.1;
/// Initial posterior standard deviation of variational latent coordinates.
const INIT_LATENT_STD: f64 = 0.1;
/// Starting neighbourhood size of the Isomap start.
const ISOMAP_NEIGHBORS: usize = 10;

/// Where a restart takes its starting latent coordinates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// PCA of `Y`.
    Pca,
    /// PCA of `Y` after removing its linear covariate trend.
    ResidualPca,
    /// Isomap of `Y` after removing its linear covariate trend.
    ResidualIsomap,
}

impl InitStrategy {
    /// Restarts cycle through residual PCA, plain PCA, and residual Isomap.
    pub fn for_restart(restart: usize) -> Self {
        match restart % 3 {
            0 => InitStrategy::ResidualPca,
            1 => InitStrategy::Pca,
            _ => InitStrategy::ResidualIsomap,
        }
    }
}

/// Leading `q` principal coordinates of `y`, each scaled to unit variance.
/// Columns with no spread are skipped; missing directions are left at zero.
pub(crate) fn principal_coordinates(y: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let n = y.nrows();
    let keep: Vec<usize> = (0..y.ncols())
        .filter(|&j| {
            let c = y.column(j);
            let m = c.mean();
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() > 1e-24
        })
        .collect();
    let mut out = DMatrix::zeros(n, q);
    if keep.is_empty() {
        return out;
    }
    let centered = DMatrix::from_fn(n, keep.len(), |i, k| {
        let c = y.column(keep[k]);
        c[i] - c.mean()
    });
    let Ok(svd) = faer::MatRef::from_column_major_slice(centered.as_slice(), n, keep.len()).thin_svd() else {
        return out;
    };
    let (u, sv) = (svd.U(), svd.S().column_vector());
    // singular values come sorted in decreasing order
    for d in 0..q.min(sv.nrows()) {
        if sv[d] <= 1e-12 * sv[0] {
            break;
        }
        set_standardized(&mut out, d, (0..n).map(|i| u[(i, d)]).collect());
    }
    out
}

/// Write `col` into column `d` of `out`, centred, scaled to unit variance,
/// and signed so that its largest-magnitude entry is positive.
fn set_standardized(out: &mut DMatrix<f64>, d: usize, mut col: Vec<f64>) {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    col.iter_mut().for_each(|v| *v -= m);
    let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return;
    }
    let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    let scale = pivot.signum() / sd;
    for (i, v) in col.iter().enumerate() {
        out[(i, d)] = v * scale;
    }
}

/// Shortest-path distances in the symmetric `k`-nearest-neighbour graph of
/// the rows of `y`, or `None` if the graph is disconnected.
fn geodesic_distances(y: &DMatrix<f64>, k: usize) -> Option<DMatrix<f64>> {
    let n = y.nrows();
    let dist = DMatrix::from_fn(n, n, |i, j| (y.row(i) - y.row(j)).norm());
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            adj[i].push((j, dist[(i, j)]));
            adj[j].push((i, dist[(i, j)]));
        }
    }
    let mut out = DMatrix::from_element(n, n, f64::INFINITY);
    for src in 0..n {
        let mut heap = BinaryHeap::new();
        out[(src, src)] = 0.0;
        heap.push(Reverse((Ordered(0.0), src)));
        while let Some(Reverse((Ordered(d), u))) = heap.pop() {
            if d > out[(src, u)] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let nd = d + w;
                if nd < out[(src, v)] {
                    out[(src, v)] = nd;
                    heap.push(Reverse((Ordered(nd), v)));
                }
            }
        }
        if out.row(src).iter().any(|v| v.is_infinite()) {
            return None;
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Leading `q` Isomap coordinates of the rows of `y`: classical scaling of
/// geodesic distances in a nearest-neighbour graph. The neighbourhood
/// starts at `ISOMAP_NEIGHBORS` and doubles until the graph is connected.
pub(crate) fn isomap_coordinates(y: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let n = y.nrows();
    let mut out = DMatrix::zeros(n, q);
    if n < 3 {
        return out;
    }
    let mut k = ISOMAP_NEIGHBORS.min(n - 1);
    let geo = loop {
        if let Some(g) = geodesic_distances(y, k) {
            break g;
        }
        if k == n - 1 {
            return principal_coordinates(y, q);
        }
        k = (2 * k).min(n - 1);
    };
    // double-centred squared distances
    let sq = geo.map(|d| d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let total = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + total));
    let Ok(eig) = faer::MatRef::from_column_major_slice(b.as_slice(), n, n).self_adjoint_eigen(faer::Side::Lower) else {
        return principal_coordinates(y, q);
    };
    let (u, s) = (eig.U(), eig.S().column_vector());
    // eigenvalues come sorted in increasing order
    let top = s[n - 1];
    for d in 0..q.min(n) {
        let idx = n - 1 - d;
        if !(s[idx] > 1e-12 * top) {
            break;
        }
        set_standardized(&mut out, d, (0..n).map(|i| u[(i, idx)]).collect());
    }
    out
}

/// `y` with the least-squares fit on `[1, x]` removed.
pub(crate) fn residualize(y: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let design = DMatrix::from_fn(n, x.ncols() + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
    match (design.transpose() * &design).cholesky() {
        Some(chol) => y - &design * chol.solve(&(design.transpose() * y)),
        None => y.clone(),
    }
}

/// Starting point for fitting: unit-variance coordinates from `strategy`
/// plus Gaussian jitter, and censored covariates at the median of their
/// truncated prior.
pub fn init_latent(ds: &Dataset, cfg: &ModelConfig, seed: u64, strategy: InitStrategy) -> Result<LatentState> {
    let q = cfg.q;
    let residual = || {
        if ds.c() > 0 && cfg.kernel.uses_covariates() {
            residualize(ds.y(), &ds.x_kernel())
        } else {
            ds.y().clone()
        }
    };
    let base = match strategy {
        InitStrategy::Pca => principal_coordinates(ds.y(), q),
        InitStrategy::ResidualPca => principal_coordinates(&residual(), q),
        InitStrategy::ResidualIsomap => isomap_coordinates(&residual(), q),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, INIT_JITTER_STD).expect("valid normal");
    let z_mean = DMatrix::from_fn(ds.n(), q, |i, d| base[(i, d)] + jitter.sample(&mut rng));
    let z_log_std = DMatrix::from_element(ds.n(), q, INIT_LATENT_STD.ln());

    let mut x_cens_mean = Vec::with_capacity(ds.censored().len());
    let mut x_cens_log_std = Vec::with_capacity(ds.censored().len());
    if ds.has_censoring() {
        let prior = cfg.censoring.as_ref().ok_or_else(|| Error::invalid("censored covariates require a Weibull prior"))?;
        for e in ds.censored() {
            let b = prior.effective_upper(e.upper);
            x_cens_mean.push(prior.truncated_median(e.lower, b)?.max(e.lower));
            x_cens_log_std.push((0.1 * (b - e.lower)).ln());
        }
    }
    Ok(LatentState { z_mean, z_log_std, x_cens_mean, x_cens_log_std })
}
