use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn cgplvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgplvm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, kind: &str, n: &str, extra: &[&str]) {
    let mut args = vec!["generate", "--kind", kind, "--n", n, "--seed", "3", "--out", p(dir)];
    args.extend_from_slice(extra);
    let o = cgplvm(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn quick_fit(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--data", p(data), "--iters", "150", "--restarts", "1", "--out-dir", p(out)];
    args.extend_from_slice(extra);
    cgplvm(&args)
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn generate_writes_data_and_labels() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    generate(&a, "survival_toy", "100", &[]);
    let data = fs::read_to_string(a.join("data.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next(), Some("y1,y2,y3,y4,x"));
    assert_eq!(lines.count(), 100);
    assert_eq!(fs::read_to_string(a.join("labels.csv")).unwrap().lines().next(), Some("z,x"));

    let b = t.path().join("b");
    generate(&b, "survival_toy", "100", &[]);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    assert_eq!(fs::read(a.join("labels.csv")).unwrap(), fs::read(b.join("labels.csv")).unwrap());
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    let t = tempfile::tempdir().unwrap();
    let o = cgplvm(&["generate", "--kind", "spirals", "--out", p(t.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown generator"));
    assert_eq!(code(&cgplvm(&["generate", "--out", p(t.path())])), 1);
    assert_eq!(code(&cgplvm(&["frobnicate"])), 1);
    assert_eq!(code(&cgplvm(&["--help"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_cgplvm"))
        .args(["generate", "--kind", "rings", "--out", p(t.path())])
        .env("CGPLVM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    let blocker = t.path().join("file");
    write(&blocker, "x");
    let o = cgplvm(&["generate", "--kind", "rings", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = quick_fit(&t.path().join("missing.csv"), &t.path().join("fit"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_decompose_evaluate_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let gen = t.path().join("gen");
    generate(&gen, "linear_add", "40", &["--features", "5"]);
    let fit_dir = t.path().join("fit");
    let o = quick_fit(&gen.join("data.csv"), &fit_dir, &["--covariates", "x"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let latent = fs::read_to_string(fit_dir.join("latent.csv")).unwrap();
    assert_eq!(latent.lines().next(), Some("z1"));
    assert_eq!(latent.lines().count(), 41);
    assert!(!fit_dir.join("censored_posterior.json").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(fit_dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["objective_trace"].as_array().unwrap().len() > 0);

    let out = t.path().join("dec.json");
    let o = cgplvm(&["decompose", "--fit-dir", p(&fit_dir), "--feature", "y2", "--grid-size", "50", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(d["grid_z"].as_array().unwrap().len(), 50);
    assert_eq!(d["components"]["z"]["mean"].as_array().unwrap().len(), 50);
    assert_eq!(d["components"]["x"]["var"].as_array().unwrap().len(), 50);
    assert_eq!(d["components"]["zx"]["mean"].as_array().unwrap().len(), 2500);
    let f = &d["fractions"];
    let sum = f["z"].as_f64().unwrap() + f["x"].as_f64().unwrap() + f["zx"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-6);

    let o = cgplvm(&["decompose", "--fit-dir", p(&fit_dir), "--feature", "nope", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    let o = cgplvm(&["decompose", "--fit-dir", p(&t.path().join("none")), "--feature", "y1", "--out", p(&out)]);
    assert_eq!(code(&o), 2);

    let o = cgplvm(&["evaluate", "--latent", p(&fit_dir.join("latent.csv")), "--truth", p(&gen.join("labels.csv"))]);
    assert_eq!(code(&o), 0);
    let r: f64 = stdout(&o).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&r));
}

#[test]
fn decompose_refuses_other_schema_versions() {
    let t = tempfile::tempdir().unwrap();
    let gen = t.path().join("gen");
    generate(&gen, "survival_toy", "20", &[]);
    let fit_dir = t.path().join("fit");
    assert_eq!(code(&quick_fit(&gen.join("data.csv"), &fit_dir, &["--covariates", "x"])), 0);
    let path = fit_dir.join("fit.json");
    let text = fs::read_to_string(&path).unwrap().replacen("\"schema_version\":1", "\"schema_version\":99", 1);
    write(&path, &text);
    let o = cgplvm(&["decompose", "--fit-dir", p(&fit_dir), "--feature", "y1", "--out", p(&t.path().join("d.json"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schema version"));
}

#[test]
fn mismatched_kernel_still_fits() {
    let t = tempfile::tempdir().unwrap();
    let gen = t.path().join("gen");
    generate(&gen, "pinwheel", "50", &[]);
    let o = quick_fit(&gen.join("data.csv"), &t.path().join("fit"), &["--covariates", "x", "--kernel", "add"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn censored_fit_needs_weibull_prior_and_variational_mode() {
    let t = tempfile::tempdir().unwrap();
    let gen = t.path().join("gen");
    generate(&gen, "survival_toy", "30", &["--censor-fraction", "0.2"]);
    let data = gen.join("data.csv");
    let fit_dir = t.path().join("fit");
    let o = quick_fit(&data, &fit_dir, &["--censor-cols", "x:x_censored", "--weibull-scale", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--weibull-shape"));
    let prior = ["--censor-cols", "x:x_censored", "--weibull-shape", "2", "--weibull-scale", "1"];
    let mut with_map = prior.to_vec();
    with_map.extend(["--mode", "map"]);
    assert_eq!(code(&quick_fit(&data, &fit_dir, &with_map)), 1);

    let o = quick_fit(&data, &fit_dir, &prior);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(fit_dir.join("latent.csv")).unwrap().lines().next(), Some("z1,z1_std"));
    let post: Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("censored_posterior.json")).unwrap()).unwrap();
    let entries = post["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 6);
    for e in entries {
        let g = |k: &str| e[k].as_f64().unwrap();
        assert!(g("lower") <= g("q05") && g("q05") <= g("q95") && g("q95") <= g("upper"));
        assert!(g("mean") >= g("lower"));
    }
}

#[test]
fn censor_experiment_rows_respect_bounds() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("exp.json");
    let o = cgplvm(&[
        "censor-experiment", "--kind", "survival_toy", "--lower-grid", "0.7,1.7", "--true-x", "1.5", "--n", "30",
        "--iters", "200", "--restarts", "1", "--seed", "2", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let rows = v["scenarios"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r["mean"].as_f64().unwrap() >= r["lower"].as_f64().unwrap());
    }
    assert!(rows[1]["q05"].as_f64().unwrap() >= 1.7);

    let o = cgplvm(&["censor-experiment", "--lower-grid", "1.0,0.8", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    let o = cgplvm(&["censor-experiment", "--kind", "rings", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_reports_absolute_correlation() {
    let t = tempfile::tempdir().unwrap();
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 100.0 - 5.0 + 0.001 * i as f64).collect();
    let csv = |name: &str, vals: &[f64]| {
        let path = t.path().join(name);
        let body: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        write(&path, &format!("z\n{}\n", body.join("\n")));
        path
    };
    let truth = csv("truth.csv", &z);
    let neg: Vec<f64> = z.iter().map(|v| -v).collect();
    let negated = csv("neg.csv", &neg);
    let mut shuffled_vals = z.clone();
    shuffled_vals.shuffle(&mut rng);
    let shuffled = csv("shuf.csv", &shuffled_vals);
    let short = csv("short.csv", &z[..10]);

    let corr = |latent: &Path| {
        let o = cgplvm(&["evaluate", "--latent", p(latent), "--truth", p(&truth)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o).trim().parse::<f64>().unwrap()
    };
    assert_eq!(corr(&truth), 1.0);
    assert_eq!(corr(&negated), 1.0);
    // |r| has sd about 1/sqrt(1000) under a random permutation
    assert!(corr(&shuffled) < 0.1);
    let o = cgplvm(&["evaluate", "--latent", p(&short), "--truth", p(&truth)]);
    assert_eq!(code(&o), 1);
}
