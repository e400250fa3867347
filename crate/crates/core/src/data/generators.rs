use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Minimum number of samples a generator will produce.
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Rings,
    Pinwheel,
    SurvivalToy,
    LinearAdd,
    LinearInt,
    Monotone,
    MonotoneTransient,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 7] = [
        GeneratorKind::Rings,
        GeneratorKind::Pinwheel,
        GeneratorKind::SurvivalToy,
        GeneratorKind::LinearAdd,
        GeneratorKind::LinearInt,
        GeneratorKind::Monotone,
        GeneratorKind::MonotoneTransient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Rings => "rings",
            GeneratorKind::Pinwheel => "pinwheel",
            GeneratorKind::SurvivalToy => "survival_toy",
            GeneratorKind::LinearAdd => "linear_add",
            GeneratorKind::LinearInt => "linear_int",
            GeneratorKind::Monotone => "monotone",
            GeneratorKind::MonotoneTransient => "monotone_transient",
        }
    }

    pub fn is_tabular(self) -> bool {
        matches!(
            self,
            GeneratorKind::LinearAdd | GeneratorKind::LinearInt | GeneratorKind::Monotone | GeneratorKind::MonotoneTransient
        )
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        GeneratorKind::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            let known: Vec<&str> = GeneratorKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown generator '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

/// What to generate. `n` is the total sample count; for rings and pinwheel
/// it is split evenly across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Ring or spoke count.
    pub groups: usize,
    /// Feature count for the tabular generators.
    pub features: usize,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, noise_std: f64, seed: u64) -> Self {
        GeneratorSpec { kind, n, noise_std, seed, groups: 5, features: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(Error::invalid(format!("need at least {MIN_SAMPLES} samples, got {}", self.n)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise std must be non-negative, got {}", self.noise_std)));
        }
        if matches!(self.kind, GeneratorKind::Rings | GeneratorKind::Pinwheel) && self.groups < 2 {
            return Err(Error::invalid("rings and pinwheel need at least 2 groups"));
        }
        if self.kind.is_tabular() && self.features < 4 {
            return Err(Error::invalid(format!("tabular generators need at least 4 features, got {}", self.features)));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        self.validate()?;
        match self.kind {
            GeneratorKind::Rings => generate_rings(self.n.div_ceil(self.groups), self.groups, self.noise_std, self.seed),
            GeneratorKind::Pinwheel => {
                generate_pinwheel(self.n.div_ceil(self.groups), self.groups, self.noise_std, self.seed)
            }
            GeneratorKind::SurvivalToy => generate_survival_toy(self.n, self.noise_std, self.seed),
            k => generate_tabular(k, self.n, self.features, self.noise_std, self.seed),
        }
    }
}

/// A dataset together with the ground truth that produced it. The truth is
/// kept out of [`Dataset`] so that fitting can never see it.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub ds: Dataset,
    pub true_z: Vec<f64>,
    /// Covariate before any censoring.
    pub true_x: Vec<f64>,
    /// Unstandardized observations.
    pub y_raw: DMatrix<f64>,
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

fn labeled(y_raw: DMatrix<f64>, z: Vec<f64>, x: Vec<f64>) -> Result<LabeledDataset> {
    let n = x.len();
    let ds = Dataset::new(y_raw.clone(), DMatrix::from_column_slice(n, 1, &x), vec![], names("y", y_raw.ncols()), vec!["x".into()])?;
    Ok(LabeledDataset { ds, true_z: z, true_x: x, y_raw })
}

fn noise_source(noise_std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, noise_std).map_err(|e| Error::invalid(format!("noise std: {e}")))
}

/// Noise-free survival-toy features at `(z, x)`.
pub fn survival_toy_features(z: f64, x: f64) -> [f64; 4] {
    let gate = if z > 0.0 { 1.0 } else { 0.0 };
    [
        z.sin() + 0.2 * x + 0.2 * z.sin() * x * gate,
        (-z * z).exp() + 0.3 * x.tanh(),
        0.2 * z,
        (-z * z).exp(),
    ]
}

/// Four features of one latent `z ~ N(0, 1)` and a survival time
/// `x ~ Weibull(shape 2, scale 1)`: `y1` has an interaction effect, `y2` an
/// additive covariate effect, and `y3`, `y4` depend on `z` only.
pub fn generate_survival_toy(n: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = noise_source(noise_std)?;
    let weibull = Weibull::new(1.0, 2.0).expect("valid Weibull");
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let x: Vec<f64> = (0..n).map(|_| weibull.sample(&mut rng)).collect();
    let mut y = DMatrix::zeros(n, 4);
    for i in 0..n {
        let f = survival_toy_features(z[i], x[i]);
        for j in 0..4 {
            y[(i, j)] = f[j] + eps.sample(&mut rng);
        }
    }
    labeled(y, z, x)
}

fn group_levels(k: usize) -> Vec<f64> {
    (0..k).map(|g| -1.0 + 2.0 * g as f64 / (k - 1) as f64).collect()
}

/// Noise-free ring features.
pub fn ring_features(z: f64, x: f64) -> [f64; 2] {
    [(PI * z).cos() + 1.2 * x, (PI * z).sin() + 0.4 * x]
}

/// Concentric closed curves: one per ring level `x` in `[-1, 1]`, traced by
/// `z ~ U(-1, 1)`. The covariate enters additively.
pub fn generate_rings(n_per_ring: usize, rings: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if rings < 2 {
        return Err(Error::invalid("need at least 2 rings"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = noise_source(noise_std)?;
    let n = n_per_ring * rings;
    let (mut z, mut x) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut y = DMatrix::zeros(n, 2);
    for (g, level) in group_levels(rings).into_iter().enumerate() {
        for k in 0..n_per_ring {
            let i = g * n_per_ring + k;
            let zi: f64 = rng.random_range(-1.0..1.0);
            let f = ring_features(zi, level);
            y[(i, 0)] = f[0] + eps.sample(&mut rng);
            y[(i, 1)] = f[1] + eps.sample(&mut rng);
            z.push(zi);
            x.push(level);
        }
    }
    labeled(y, z, x)
}

/// Noise-free pinwheel features.
pub fn pinwheel_features(z: f64, x: f64) -> [f64; 2] {
    let theta = PI * x / 2.0 + 0.8 * z;
    let r = 0.3 + z;
    [r * theta.cos(), r * theta.sin()]
}

/// Swirling spokes: the spoke angle is set by `x` in `[-1, 1]` and bends
/// with the radial position `z ~ U(0, 1)`, so `z` and `x` interact.
pub fn generate_pinwheel(n_per_spoke: usize, spokes: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if spokes < 2 {
        return Err(Error::invalid("need at least 2 spokes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = noise_source(noise_std)?;
    let n = n_per_spoke * spokes;
    let (mut z, mut x) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut y = DMatrix::zeros(n, 2);
    for (g, level) in group_levels(spokes).into_iter().enumerate() {
        for k in 0..n_per_spoke {
            let i = g * n_per_spoke + k;
            let zi: f64 = rng.random_range(0.0..1.0);
            let f = pinwheel_features(zi, level);
            y[(i, 0)] = f[0] + eps.sample(&mut rng);
            y[(i, 1)] = f[1] + eps.sample(&mut rng);
            z.push(zi);
            x.push(level);
        }
    }
    labeled(y, z, x)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Per-feature coefficients of the tabular generators.
#[derive(Debug, Clone, Copy)]
struct TabularFeature {
    z_coef: f64,
    x_coef: f64,
    zx_coef: f64,
    amplitude: f64,
    slope: f64,
    shift: f64,
    bump: f64,
    bump_center: f64,
    bump_width: f64,
}

impl TabularFeature {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
        TabularFeature {
            z_coef: sign(rng) * rng.random_range(0.5..1.5),
            x_coef: rng.random_range(-0.5..0.5),
            zx_coef: sign(rng) * rng.random_range(0.3..0.8),
            amplitude: rng.random_range(1.0..2.0),
            slope: rng.random_range(1.5..4.0),
            shift: rng.random_range(-1.0..1.0),
            bump: sign(rng) * rng.random_range(0.5..1.0),
            bump_center: rng.random_range(-1.5..1.5),
            bump_width: rng.random_range(0.4..0.8),
        }
    }

    fn eval(&self, kind: GeneratorKind, z: f64, x: f64) -> f64 {
        let monotone = self.amplitude * sigmoid(self.slope * (z - self.shift));
        let transient = self.bump * (-((z - self.bump_center) / self.bump_width).powi(2)).exp();
        let additive = self.x_coef * x;
        match kind {
            GeneratorKind::LinearAdd => self.z_coef * z + additive,
            GeneratorKind::LinearInt => self.z_coef * z + additive + self.zx_coef * z * x,
            GeneratorKind::Monotone => monotone + additive,
            GeneratorKind::MonotoneTransient => monotone + transient + additive,
            _ => unreachable!("not a tabular generator"),
        }
    }
}

/// Tabular data with `z ~ N(0, 1)`, `x ~ U(-1, 1)`, and per-feature random
/// coefficients: linear additive, linear with a `z * x` term, monotone
/// sigmoids in `z`, or sigmoids plus Gaussian bumps.
pub fn generate_tabular(kind: GeneratorKind, n: usize, p: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if !kind.is_tabular() {
        return Err(Error::invalid(format!("{kind} is not a tabular generator")));
    }
    if p < 4 {
        return Err(Error::invalid(format!("tabular generators need at least 4 features, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = noise_source(noise_std)?;
    let coefs: Vec<TabularFeature> = (0..p).map(|_| TabularFeature::draw(&mut rng)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, c) in coefs.iter().enumerate() {
            y[(i, j)] = c.eval(kind, z[i], x[i]) + eps.sample(&mut rng);
        }
    }
    labeled(y, z, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_toy_formulas() {
        assert_eq!(survival_toy_features(0.0, 0.0), [0.0, 1.0, 0.0, 1.0]);
        assert!((survival_toy_features(1.0, 0.0)[2] - 0.2).abs() < 1e-15);
        let a = generate_survival_toy(50, 0.1, 3).unwrap();
        assert_eq!(a.ds.p(), 4);
        assert!(a.true_x.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn survival_toy_last_feature_ignores_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let z: f64 = rng.random_range(-3.0..3.0);
            let (x1, x2): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            assert_eq!(survival_toy_features(z, x1)[3], survival_toy_features(z, x2)[3]);
        }
    }

    #[test]
    fn rings_close_and_pass_through_origin_value() {
        assert_eq!(ring_features(0.0, 0.0), [1.0, 0.0]);
        for level in group_levels(5) {
            let (a, b) = (ring_features(-1.0, level), ring_features(1.0, level));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        assert_eq!(group_levels(5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let r = generate_rings(12, 5, 0.1, 1).unwrap();
        assert_eq!(r.ds.n(), 60);
    }

    #[test]
    fn pinwheel_geometry() {
        for level in group_levels(5) {
            let f = pinwheel_features(0.0, level);
            assert!((f[0].hypot(f[1]) - 0.3).abs() < 1e-12);
        }
        let levels = group_levels(5);
        for z in [0.0, 0.4, 1.0] {
            let angles: Vec<f64> = levels.iter().map(|&x| {
                let f = pinwheel_features(z, x);
                f[1].atan2(f[0])
            }).collect();
            for i in 0..angles.len() {
                for j in 0..i {
                    assert!((angles[i] - angles[j]).abs() > 1e-3);
                }
            }
        }
    }

    #[test]
    fn linear_add_is_rank_two_without_noise() {
        let ld = generate_tabular(GeneratorKind::LinearAdd, 40, 6, 0.0, 2).unwrap();
        let sv = ld.ds.y().clone().singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] > 1e-6 * s[0]);
        assert!(s[2] < 1e-9 * s[0], "{s:?}");
    }

    #[test]
    fn monotone_features_are_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coefs: Vec<TabularFeature> = (0..8).map(|_| TabularFeature::draw(&mut rng)).collect();
        for c in &coefs {
            for x in [-1.0, 0.0, 0.7] {
                let mut prev = f64::NEG_INFINITY;
                for k in 0..400 {
                    let v = c.eval(GeneratorKind::Monotone, -4.0 + 0.02 * k as f64, x);
                    assert!(v >= prev);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn seeds_control_noise() {
        for kind in GeneratorKind::ALL {
            let spec = GeneratorSpec::new(kind, 30, 0.1, 5);
            let (a, b) = (spec.generate().unwrap(), spec.generate().unwrap());
            assert_eq!(a.y_raw, b.y_raw, "{kind}");
            let c = GeneratorSpec { seed: 6, ..spec }.generate().unwrap();
            assert_ne!(a.y_raw, c.y_raw, "{kind}");
        }
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("survival-toy".parse::<GeneratorKind>().unwrap(), GeneratorKind::SurvivalToy);
        assert!("spiral".parse::<GeneratorKind>().is_err());
        assert!(GeneratorSpec::new(GeneratorKind::Rings, 5, 0.1, 0).validate().is_err());
    }
}
