use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eiv_tls::io::write_csv;
use eiv_tls::montecarlo::{generate_noise, SimStudySpec, StudyContext};
use eiv_tls::{make_true_model, tls_solve, validate_dataset, SolverConfig};
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eiv-tls"));
    c.env_remove("EIV_TLS_SEED");
    c
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_of(o: &Output) -> Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn assert_schema(schema: &str, doc: &Value) {
    let text = std::fs::read_to_string(repo_file(&format!("docs/schemas/{schema}.schema.json"))).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        Files { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn matrices(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (String, String) {
        (self.write("a.csv", &write_csv(a)), self.write("b.csv", &write_csv(b)))
    }

    fn spec(&self, spec: &SimStudySpec) -> String {
        self.write("spec.json", &serde_json::to_string_pretty(spec).unwrap())
    }
}

fn matrix(v: &Value) -> DMatrix<f64> {
    let shape: Vec<usize> = v["shape"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
    let data: Vec<f64> = v["data"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    DMatrix::from_row_slice(shape[0], shape[1], &data)
}

fn simulated(m: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let spec = SimStudySpec::default_study(seed);
    let ctx = StudyContext::new(&spec, m).unwrap();
    let (ea, eb) = generate_noise(&spec, m, 0).unwrap();
    let ds = ctx.model.observe(&ea, &eb).unwrap();
    (ds.a().clone(), ds.b().clone(), ctx.model.x0().clone())
}

#[test]
fn fit_recovers_noise_free_truth() {
    let spec = SimStudySpec::default_study(4);
    let ctx = StudyContext::new(&spec, 200).unwrap();
    let f = Files::new();
    let (a, b) = f.matrices(ctx.model.a0(), &ctx.model.b0());
    let out = json_of(&run(&["fit", &a, &b]));
    assert_schema("fit", &out);
    assert_eq!(out["schema_version"], "1.0");
    let x = matrix(&out["x_hat"]);
    assert!((x - ctx.model.x0()).norm() <= 1e-10);
    assert!(out["sigma2_hat"].as_f64().unwrap() <= 1e-14);
    // Exact data may leave σ̂² a round-off below zero; that is reported, nothing else is.
    let warnings = out["warnings"].as_array().unwrap();
    assert!(warnings.iter().all(|w| w["kind"] == "sigma2_clamped"), "{warnings:?}");
}

#[test]
fn header_flag_skips_one_line() {
    let f = Files::new();
    let a = f.write("a.csv", "x1\n1\n2\n3\n4\n");
    let b = f.write("b.csv", "y\n2\n4\n6\n8\n");
    let out = json_of(&run(&["fit", "--header", &a, &b]));
    assert!((matrix(&out["x_hat"])[(0, 0)] - 2.0).abs() < 1e-12);
    let o = run(&["fit", &a, &b]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn row_mismatch_names_files_and_counts() {
    let f = Files::new();
    let a = f.write("inputs.csv", "1,0\n2,1\n3,1\n4,3\n");
    let b = f.write("outputs.csv", "1\n3\n4\n");
    let o = run(&["fit", &a, &b]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    for needle in ["inputs.csv", "outputs.csv", "4 rows", "3 rows"] {
        assert!(msg.contains(needle), "{msg}");
    }
    assert!(!msg.contains("panicked"));
}

#[test]
fn degenerate_spectrum_warns() {
    // [A, B] = U diag(3, 1 + ε, 1) Vᵀ with an orthogonal V whose lower-right
    // block is invertible, so the solution exists but is ill-determined.
    let eps = 1e-13;
    let u = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64 * 0.41).sin() + if i == j { 2.0 } else { 0.0 })
        .qr()
        .q()
        .columns(0, 3)
        .into_owned();
    let (c, s) = (0.6_f64, 0.8_f64);
    let v = DMatrix::from_row_slice(3, 3, &[c, -s * c, s * s, s, c * c, -c * s, 0.0, s, c]);
    let sv = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[3.0, 1.0 + eps, 1.0]));
    let z = &u * sv * v.transpose();
    // Oracle: the compound matrix really has the intended spectrum.
    let check = z.clone().svd(false, false).singular_values;
    let mut got: Vec<f64> = check.iter().copied().collect();
    got.sort_by(|a, b| b.total_cmp(a));
    assert!((got[1] - got[2]).abs() / got[0] <= 1e-10, "{got:?}");

    let f = Files::new();
    let (a, b) = f.matrices(&z.columns(0, 2).into_owned(), &z.columns(2, 1).into_owned());
    let o = run(&["fit", &a, &b]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = json_of(&o);
    let warnings = out["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w["kind"] == "degenerate_spectrum"), "{warnings:?}");
    assert_schema("fit", &out);
}

#[test]
fn singular_block_exits_2() {
    let f = Files::new();
    let a = f.write("a.csv", "0.1\n0\n0\n");
    let b = f.write("b.csv", "0\n1\n0\n");
    let o = run(&["fit", &a, &b]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no TLS solution"));
}

#[test]
fn ci_contracts() {
    let (am, bm, _) = simulated(400, 8);
    let f = Files::new();
    let (a, b) = f.matrices(&am, &bm);
    let o = run(&["ci", &a, &b, "--u", "0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonzero"));
    let o = run(&["ci", &a, &b, "--u", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["ci", &a, &b, "--u", "1,0", "--level", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["ci", &a, &b, "--u", "1,0", "--method", "analytic"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--assume-normal"));

    let e95 = json_of(&run(&["ci", &a, &b, "--u", "1,-0.5"]));
    let e99 = json_of(&run(&["ci", &a, &b, "--u", "1,-0.5", "--level", "0.99"]));
    assert_schema("ci", &e95);
    assert_eq!(e95["method"], "sandwich");
    assert_eq!(e95["df"], 3);
    assert_eq!(e95["center"], e99["center"]);
    assert_eq!(e95["shape"], e99["shape"]);
    assert!(e99["radius2"].as_f64().unwrap() > e95["radius2"].as_f64().unwrap());

    let an = json_of(&run(&["ci", &a, &b, "--u", "1,-0.5", "--method", "analytic", "--assume-normal"]));
    assert_schema("ci", &an);
    assert_eq!(an["method"], "analytic");
    assert!(an["disclaimer"].is_string());
}

#[test]
fn one_dimensional_interval() {
    let m = 500;
    let a0 = DMatrix::from_fn(m, 1, |i, _| 1.0 + ((i as f64) * 0.37).sin());
    let x0 = DMatrix::from_element(1, 1, 0.7);
    let model = make_true_model(a0, x0, 0.04).unwrap();
    let ea = DMatrix::from_fn(m, 1, |i, _| 0.2 * ((i as f64) * 1.7).cos());
    let eb = DMatrix::from_fn(m, 1, |i, _| 0.2 * ((i as f64) * 2.3 + 0.5).sin());
    let ds = model.observe(&ea, &eb).unwrap();
    let f = Files::new();
    let (a, b) = f.matrices(ds.a(), ds.b());
    let out = json_of(&run(&["ci", &a, &b, "--u", "1"]));
    let c = out["center"][0].as_f64().unwrap();
    let half = (matrix(&out["shape"])[(0, 0)] * out["radius2"].as_f64().unwrap()).sqrt();
    assert!((out["lo"].as_f64().unwrap() - (c - half)).abs() < 1e-12);
    assert!((out["hi"].as_f64().unwrap() - (c + half)).abs() < 1e-12);
    assert_schema("ci", &out);
}

#[test]
fn csv_roundtrip_reproduces_fit() {
    let (am, bm, _) = simulated(300, 12);
    let f = Files::new();
    let (a, b) = f.matrices(&am, &bm);
    let out = json_of(&run(&["fit", &a, &b]));
    let ds = validate_dataset(am, bm).unwrap();
    let direct = tls_solve(&ds, &SolverConfig::for_dataset(&ds)).unwrap();
    assert!((matrix(&out["x_hat"]) - direct.x_hat).amax() <= 1e-12);
}

#[test]
fn bundled_default_spec_matches_library() {
    let text = std::fs::read_to_string(repo_file("docs/default_study.json")).unwrap();
    assert_eq!(SimStudySpec::from_json(&text).unwrap(), SimStudySpec::default_study(0));
    assert_schema("sim-study-spec", &serde_json::from_str(&text).unwrap());
}

#[test]
fn simulate_smoke_and_determinism() {
    let f = Files::new();
    let mut spec = SimStudySpec::default_study(0);
    spec.reps = 50;
    let s = f.spec(&spec);
    let (o1, o2, csv) = (f.path("r1.json"), f.path("r2.json"), f.path("summary.csv"));
    let r = run(&["simulate", "--spec", &s, "-o", &o1, "--csv-summary", &csv]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(run(&["simulate", "--spec", &s, "-o", &o2]).status.success());
    let b1 = std::fs::read(&o1).unwrap();
    assert_eq!(b1, std::fs::read(&o2).unwrap());
    let report: Value = serde_json::from_slice(&b1).unwrap();
    assert_schema("sim-study-report", &report);
    for m in report["per_m"].as_array().unwrap() {
        assert_eq!(m["failures"]["total"], 0);
    }
    let summary = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(summary.lines().count(), 1 + spec.m_schedule.len());
    assert!(summary.starts_with("m,reps,successes,failures,median_error"));
}

#[test]
fn simulate_rejects_bad_specs() {
    let f = Files::new();
    let mut spec = SimStudySpec::default_study(0);
    spec.reps = 0;
    let s = f.spec(&spec);
    let o = run(&["simulate", "--spec", &s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reps"), "{}", stderr(&o));

    let mut text = serde_json::to_string(&SimStudySpec::default_study(0)).unwrap();
    text = text.replace("\"sigma\":0.3", "\"sigma\":-1");
    let s = f.write("neg.json", &text);
    let o = run(&["simulate", "--spec", &s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigma"));
}

#[test]
fn seed_precedence() {
    let f = Files::new();
    let mut spec = SimStudySpec::default_study(0);
    spec.reps = 3;
    spec.m_schedule = vec![50];
    spec.base_seed = 5;
    let s = f.spec(&spec);
    let seed_of = |o: &Output| json_of(o)["spec"]["base_seed"].as_u64().unwrap();
    assert_eq!(seed_of(&run(&["simulate", "--spec", &s])), 5);
    let env = bin().args(["simulate", "--spec", &s]).env("EIV_TLS_SEED", "9").output().unwrap();
    assert_eq!(seed_of(&env), 9);
    let both = bin().args(["simulate", "--spec", &s, "--seed", "11"]).env("EIV_TLS_SEED", "9").output().unwrap();
    assert_eq!(seed_of(&both), 11);
}

#[test]
fn clt_check_outputs() {
    let f = Files::new();
    let one = json_of(&run(&["clt-check", "--m", "60", "--reps", "1"]));
    assert_schema("clt-report", &one);
    assert_eq!(one["sufficient_sample"], false);
    assert!(one["ks_pass_fraction"].is_null());
    assert!(one["entries"].as_array().unwrap().iter().all(|e| e["ks"].is_null()));

    let mut spec = SimStudySpec::default_study(0);
    spec.noise = eiv_tls::NoiseFamily::Uniform;
    let s = f.spec(&spec);
    let out = json_of(&run(&["clt-check", "--spec", &s, "--m", "200", "--reps", "300"]));
    assert_schema("clt-report", &out);
    assert!(out["ks_pass_fraction"].as_f64().unwrap() >= 0.9);

    let text = std::fs::read_to_string(&s).unwrap().replace("\"uniform\"", "\"exponential\"");
    let bad = f.write("bad.json", &text);
    let o = run(&["clt-check", "--spec", &bad, "--m", "100", "--reps", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("noise"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_a_user_error() {
    let o = run(&["fit", "/nonexistent/a.csv", "/nonexistent/b.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot read"));
}
