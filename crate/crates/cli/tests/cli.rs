use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const REFERENCE: &str = "\
ell = 1
ell0 = 0.4
ell1 = 0.7
xi1 = 0.2
xi2 = 0.55
rho1 = 1
rho2 = 1
alpha1 = 1
alpha2 = 1
alpha0 = 0.1
gamma1 = 0.5
gamma2 = 0.5
gamma3 = 0.5
";

fn kvbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvbeam")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn conservative_text() -> String {
    REFERENCE
        .replace("alpha0 = 0.1", "alpha0 = 0")
        .replace("gamma1 = 0.5", "gamma1 = 0")
        .replace("gamma2 = 0.5", "gamma2 = 0")
        .replace("gamma3 = 0.5", "gamma3 = 0")
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.cfg", REFERENCE);
    assert_eq!(code(&kvbeam(&["validate", "--config", &good])), 0);

    let missing = write_config(dir.path(), "missing.cfg", &REFERENCE.replace("gamma3 = 0.5\n", ""));
    let out = kvbeam(&["validate", "--config", &missing]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma3"));

    let absent = dir.path().join("absent.cfg").display().to_string();
    assert_eq!(code(&kvbeam(&["validate", "--config", &absent])), 3);
}

#[test]
fn digest_is_the_hash_of_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", REFERENCE);
    let out = dir.path().join("out");
    let out_s = out.display().to_string();
    assert_eq!(code(&kvbeam(&["--config", &cfg, "--out", &out_s, "spectrum", "--n", "10"])), 0);
    let digest = report(&out, "spectrum")["config_digest"].as_str().unwrap().to_string();
    assert_eq!(digest.len(), 64);
    // A comment changes the bytes and therefore the digest.
    let cfg2 = write_config(dir.path(), "b.cfg", &format!("# copy\n{REFERENCE}"));
    assert_eq!(code(&kvbeam(&["--config", &cfg2, "--out", &out_s, "spectrum", "--n", "10"])), 0);
    assert_ne!(report(&out, "spectrum")["config_digest"].as_str().unwrap(), digest);
}

#[test]
fn spectrum_oracle_discrepancy_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let res = kvbeam(&["--out", &out, "spectrum", "--n", "128", "--oracle", "--rect", "0,10,-1e4,1e4"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let r = report(dir.path(), "spectrum");
    assert!(r["measured"]["max_oracle_discrepancy"].as_f64().unwrap() <= 1e-4);
    assert!(r["measured"]["abscissa"].as_f64().unwrap() < 0.0);
    assert_eq!(r["measured"]["roots_in_rect"].as_f64().unwrap(), 0.0);
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "re_lambda,im_lambda,residual,certified");
    let oracle = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert_eq!(oracle.lines().count(), 11);
}

#[test]
fn undamped_spectrum_is_flagged_conservative() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", &conservative_text());
    let out = dir.path().join("out");
    let res = kvbeam(&["--config", &cfg, "--out", &out.display().to_string(), "spectrum", "--n", "64"]);
    assert_eq!(code(&res), 0);
    let r = report(&out, "spectrum");
    assert!(r["measured"]["abscissa"].as_f64().unwrap().abs() <= 1e-8);
    assert!(r["notes"][0].as_str().unwrap().starts_with("conservative"));
}

#[test]
fn resolvent_usage_and_determinism() {
    assert_eq!(code(&kvbeam(&["resolvent", "--lmin", "0.1"])), 2);
    assert_eq!(code(&kvbeam(&["resolvent", "--n-policy", "bogus"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let args = ["--out", &out, "resolvent", "--lmin", "100", "--lmax", "1000", "--ppd", "4", "--sampling", "point"];
    assert_eq!(code(&kvbeam(&args)), 0);
    let first = std::fs::read(dir.path().join("scan.csv")).unwrap();
    assert_eq!(code(&kvbeam(&args)), 0);
    assert_eq!(std::fs::read(dir.path().join("scan.csv")).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,norm,scaled_norm,mesh_n,converged");
    assert_eq!(text.lines().count(), 6);
    // One decade: the scan is written, classification is not.
    assert!(!dir.path().join("classification.json").exists());
}

#[test]
fn simulate_rate_balance_and_seed_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, dt: &str, seed: &str| {
        let out = dir.path().join(sub);
        let res = kvbeam(&["--out", &out.display().to_string(), "--seed", seed, "simulate", "--T", "2", "--dt", dt]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let a = run("a", "1e-3", "11");
    let r = report(&a, "simulate");
    assert_eq!(r["measured"]["monotone"].as_f64().unwrap(), 1.0);
    let ratio = r["measured"]["ratio"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&ratio), "{ratio}");

    let b = run("b", "5e-4", "11");
    let halving = r["measured"]["max_balance_residual"].as_f64().unwrap()
        / report(&b, "simulate")["measured"]["max_balance_residual"].as_f64().unwrap();
    assert!((3.0..=5.0).contains(&halving), "{halving}");

    let first = std::fs::read(a.join("trajectory.csv")).unwrap();
    run("a", "1e-3", "11");
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), first);
    let other = run("c", "1e-3", "12");
    assert_ne!(std::fs::read(other.join("trajectory.csv")).unwrap(), first);
}

#[test]
fn verify_on_conservative_config_skips_damped_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", &conservative_text());
    let out = dir.path().join("out");
    let res = kvbeam(&["--config", &cfg, "--out", &out.display().to_string(), "verify"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let checks = report(&out, "verify")["checks"].as_array().unwrap().clone();
    assert_eq!(checks.len(), 9);
    for c in &checks {
        let id = c["id"].as_u64().unwrap();
        let expected = if [3, 6, 8].contains(&id) { "skipped" } else { "pass" };
        assert_eq!(c["outcome"], expected, "criterion {id}");
    }
}

#[test]
fn corrupted_config_stops_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", &REFERENCE.replace("xi2 = 0.55", "xi2 = 0.55.5"));
    let out = dir.path().join("out");
    let res = kvbeam(&["--config", &cfg, "--out", &out.display().to_string(), "verify"]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
}
