//! The `cgplvm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use cgplvm::data::{
    apply_censoring, censor_experiment, decompose, load_csv, load_table, read_json, write_csv, write_json,
    CensorColumns, CensorExperimentSpec, CensoringScheme, CsvLayout, FitSummary, FittedModel, GeneratorKind,
    GeneratorSpec,
};
use cgplvm::inference::{censored_posterior, evaluate_recovery, fit, OptimizerConfig};
use cgplvm::kernels::KernelKind;
use cgplvm::model::{CensoringPrior, Mode, ModelConfig};
use cgplvm::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Name of the 0/1 flag column `generate` writes next to a censored covariate.
pub const CENSOR_FLAG_COLUMN: &str = "x_censored";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if matches!(e, Error::Io(_) | Error::Json(_)) {
            EXIT_IO
        } else {
            EXIT_USAGE
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cgplvm", version, about = "Covariate Gaussian process latent variable models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset.
    Fit(FitArgs),
    /// Decompose one feature of a fitted model on a grid.
    Decompose(DecomposeArgs),
    /// Infer a censored survival time over a grid of lower bounds.
    CensorExperiment(CensorExperimentArgs),
    /// Correlate fitted latent coordinates with the truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// rings, pinwheel, survival_toy, linear_add, linear_int, monotone or monotone_transient.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature count for the tabular generators.
    #[arg(long, default_value_t = 8)]
    pub features: usize,
    /// Ring or spoke count.
    #[arg(long, default_value_t = 5)]
    pub groups: usize,
    /// Fraction of rows whose covariate is censored (adds a flag column).
    #[arg(long)]
    pub censor_fraction: Option<f64>,
    /// Censored rows keep only the lower bound `x * (1 - offset)`.
    #[arg(long, default_value_t = 0.3)]
    pub censor_offset: f64,
    /// Output directory; receives data.csv and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Censored covariates as `value:flag` column pairs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub censor_cols: Vec<String>,
    /// Columns to leave out of the model entirely.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// add, int, add_int or se_ard.
    #[arg(long, default_value = "add_int")]
    pub kernel: String,
    /// map or variational; defaults to variational when censoring is present.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Compare restarts after this many iterations and continue only the best (0 = off).
    #[arg(long, default_value_t = 0)]
    pub screen_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub weibull_shape: Option<f64>,
    #[arg(long)]
    pub weibull_scale: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long)]
    pub feature: String,
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CensorExperimentArgs {
    #[arg(long, default_value = "survival_toy")]
    pub kind: String,
    /// Comma-separated ascending lower bounds; defaults to ten values from 0.7 to 1.7.
    #[arg(long, value_delimiter = ',')]
    pub lower_grid: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub true_x: f64,
    /// Latent value of the censored individual.
    #[arg(long, default_value_t = 1.0)]
    pub true_z: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub screen_iters: usize,
    #[arg(long, default_value_t = 2.0)]
    pub weibull_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub weibull_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Column of the latent file; defaults to `z1`, else the first column.
    #[arg(long)]
    pub latent_col: Option<String>,
    /// Column of the truth file; defaults to `z`, else the first column.
    #[arg(long)]
    pub truth_col: Option<String>,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    if let Err(e) = apply_thread_limit() {
        eprintln!("error: {e}");
        return e.code;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn apply_thread_limit() -> CliResult<()> {
    if let Ok(v) = std::env::var("CGPLVM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("CGPLVM_THREADS must be a non-negative integer, got '{v}'")))?;
        cgplvm::set_thread_limit(n);
    }
    Ok(())
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::CensorExperiment(a) => cmd_censor_experiment(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError { code: EXIT_IO, message: format!("cannot create directory {}: {e}", dir.display()) })
}

fn parent_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn optimizer(iters: usize, restarts: usize, screen: usize, seed: u64) -> OptimizerConfig {
    let d = OptimizerConfig::default();
    OptimizerConfig {
        max_iters: iters,
        // short runs still get most of their budget with free variances
        warmup_iters: d.warmup_iters.min(iters / 3),
        n_restarts: restarts,
        screening_iters: screen,
        seed,
        ..d
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let kind: GeneratorKind = a.kind.parse()?;
    let spec = GeneratorSpec { groups: a.groups, features: a.features, ..GeneratorSpec::new(kind, a.n, a.noise, a.seed) };
    let ld = spec.generate()?;
    let n = ld.ds.n();
    let mut header: Vec<String> = ld.ds.feature_names().to_vec();
    header.extend(ld.ds.covariate_names().iter().cloned());
    let p = ld.ds.p();
    let mut width = p + 1;
    let censored = match a.censor_fraction {
        Some(fraction) => {
            let ds = apply_censoring(&ld, &CensoringScheme::Fraction { fraction, offset: a.censor_offset, seed: a.seed })?;
            header.push(CENSOR_FLAG_COLUMN.into());
            width += 1;
            Some(ds)
        }
        None => None,
    };
    let mut data = DMatrix::zeros(n, width);
    data.columns_mut(0, p).copy_from(&ld.y_raw);
    for i in 0..n {
        data[(i, p)] = ld.true_x[i];
    }
    if let Some(ds) = &censored {
        for e in ds.censored() {
            data[(e.row, p)] = e.lower;
            data[(e.row, p + 1)] = 1.0;
        }
    }
    let labels = DMatrix::from_fn(n, 2, |i, j| if j == 0 { ld.true_z[i] } else { ld.true_x[i] });
    create_dir(&a.out)?;
    write_csv(&a.out.join("data.csv"), &header, &data)?;
    write_csv(&a.out.join("labels.csv"), &["z".to_string(), "x".to_string()], &labels)?;
    let n_cens = censored.as_ref().map_or(0, |d| d.censored().len());
    println!("wrote {n} rows: {p} features, 1 covariate, {n_cens} censored entries");
    Ok(())
}

fn parse_censor_cols(items: &[String]) -> CliResult<Vec<CensorColumns>> {
    items
        .iter()
        .map(|s| match s.split_once(':') {
            Some((v, f)) if !v.is_empty() && !f.is_empty() => Ok(CensorColumns { value: v.into(), flag: f.into() }),
            _ => Err(CliError::usage(format!("censor column '{s}' must look like value_column:flag_column"))),
        })
        .collect()
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let censor = parse_censor_cols(&a.censor_cols)?;
    let kernel: KernelKind = a.kernel.parse()?;
    let mode = match &a.mode {
        Some(m) => m.parse()?,
        None if censor.is_empty() => Mode::Map,
        None => Mode::Variational,
    };
    let layout = CsvLayout { covariates: a.covariates.clone(), censor, ignore: a.ignore.clone() };
    let ds = load_csv(&a.data, &layout)?;
    let mut cfg = ModelConfig::new(a.q, kernel);
    cfg.mode = mode;
    if ds.has_censoring() {
        let (shape, scale) = match (a.weibull_shape, a.weibull_scale) {
            (Some(k), Some(l)) => (k, l),
            _ => {
                return Err(CliError::usage(
                    "censored covariates need a Weibull prior: pass both --weibull-shape and --weibull-scale",
                ))
            }
        };
        let cols: Vec<usize> = ds.censored().iter().map(|e| e.col).collect();
        let max_observed = cols.iter().map(|c| ds.max_observed(*c)).fold(f64::NEG_INFINITY, f64::max);
        cfg.censoring = Some(CensoringPrior::with_default_cap(shape, scale, max_observed)?);
    }
    cfg.validate_for(&ds)?;
    let opt = optimizer(a.iters, a.restarts, a.screen_iters, a.seed);
    let result = fit(&ds, &cfg, &opt)?;

    create_dir(&a.out_dir)?;
    let summary = FitSummary::new(&result, &ds)?;
    write_json(&a.out_dir.join("fit.json"), &summary)?;
    let q = cfg.q;
    let mut header: Vec<String> = (1..=q).map(|d| format!("z{d}")).collect();
    let latent = if mode == Mode::Variational {
        header.extend((1..=q).map(|d| format!("z{d}_std")));
        let sd = result.state.z_log_std.map(f64::exp);
        let mut m = DMatrix::zeros(ds.n(), 2 * q);
        m.columns_mut(0, q).copy_from(&result.state.z_mean);
        m.columns_mut(q, q).copy_from(&sd);
        m
    } else {
        result.state.z_mean.clone()
    };
    write_csv(&a.out_dir.join("latent.csv"), &header, &latent)?;
    if ds.has_censoring() {
        write_json(&a.out_dir.join("censored_posterior.json"), &censored_posterior(&result, &ds)?)?;
    }

    println!(
        "fitted {} samples x {} features ({} kernel, {} mode): objective {:.6} after {} iterations, restart {}, {}",
        ds.n(),
        ds.p(),
        kernel.name(),
        mode,
        result.final_objective(),
        result.objective_trace.len(),
        result.restart,
        if result.converged { "converged" } else { "iteration limit reached" }
    );
    let d = &result.diagnostics;
    if d.inputs_outside_domain > 0 {
        eprintln!(
            "warning: extrapolation: {} standardized inputs fall outside the integration domain",
            d.inputs_outside_domain
        );
    }
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn cmd_decompose(a: &DecomposeArgs) -> CliResult<()> {
    let path = a.fit_dir.join("fit.json");
    if !path.is_file() {
        return Err(CliError { code: EXIT_IO, message: format!("no fit artifacts at {}", path.display()) });
    }
    let summary: FitSummary = read_json(&path)?;
    let model = FittedModel::from_summary(&summary)?;
    let d = decompose(&model, &a.feature, a.grid_size)?;
    parent_dir(&a.out)?;
    write_json(&a.out, &d)?;
    let f = &d.fractions;
    println!("{}: z {:.4}, x {:.4}, zx {:.4}", d.feature, f.z, f.x, f.zx);
    Ok(())
}

pub fn cmd_censor_experiment(a: &CensorExperimentArgs) -> CliResult<()> {
    let kind: GeneratorKind = a.kind.parse()?;
    if kind != GeneratorKind::SurvivalToy {
        return Err(CliError::usage(format!("censoring experiments support only survival_toy, got {kind}")));
    }
    let mut spec = CensorExperimentSpec::new(a.seed, a.true_x);
    if !a.lower_grid.is_empty() {
        spec.lower_grid = a.lower_grid.clone();
    }
    spec.n = a.n;
    spec.noise_std = a.noise;
    spec.true_z = a.true_z;
    spec.weibull_shape = a.weibull_shape;
    spec.weibull_scale = a.weibull_scale;
    spec.optimizer = optimizer(a.iters, a.restarts, a.screen_iters, a.seed);
    let out = censor_experiment(&spec)?;
    parent_dir(&a.out)?;
    write_json(&a.out, &out)?;
    println!("lower      mean       std        q05        q95");
    for s in &out.scenarios {
        println!("{:<10.4} {:<10.4} {:<10.4} {:<10.4} {:<10.4}", s.lower, s.mean, s.std, s.q05, s.q95);
    }
    Ok(())
}

fn pick_column(path: &Path, explicit: &Option<String>, default: &str) -> CliResult<Vec<f64>> {
    let table = load_table(path)?;
    let name = match explicit {
        Some(c) => c.clone(),
        None if table.column_index(default).is_some() => default.to_string(),
        None => table.header.first().cloned().ok_or_else(|| CliError::usage(format!("{} has no columns", path.display())))?,
    };
    table.column(&name).ok_or_else(|| CliError::usage(format!("column '{name}' not found in {}", path.display())))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let fitted = pick_column(&a.latent, &a.latent_col, "z1")?;
    let truth = pick_column(&a.truth, &a.truth_col, "z")?;
    if fitted.len() != truth.len() {
        return Err(CliError::usage(format!(
            "row count mismatch: {} latent rows vs {} truth rows",
            fitted.len(),
            truth.len()
        )));
    }
    println!("{:.6}", evaluate_recovery(&fitted, &truth)?);
    Ok(())
}
