use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tslab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn tslab")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn bounds_report_matches_scalar_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(
        &[
            "bounds",
            "--horizon",
            "1",
            "--set",
            "d=1",
            "--set",
            "sigma=1",
            "--set",
            "r=1",
            "--set",
            "prior_eigenvalues=1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    let upper = r["results"]["upper_theorem1"].as_f64().unwrap();
    assert!((upper - 5.59163).abs() < 1e-5, "{upper}");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn empty_fuzz_is_a_success() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(&["elliptical-check", "--instances", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(report(dir.path())["results"]["instances"], 0);
}

#[test]
fn simulate_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--replicates", "40", "--horizon", "64", "--seed", "3"];
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_tslab"))
            .args(args)
            .arg("--out")
            .arg(&out)
            .env("TSLAB_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        (std::fs::read(out.join("results.csv")).unwrap(), std::fs::read(out.join("report.json")).unwrap())
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
    let header = String::from_utf8(a.0).unwrap();
    assert!(header.starts_with("config_hash,d,r,sigma,tr_sigma0,T,mean_regret,ci_half_width,bound_upper,bound_lower\n"));
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nd = 3\nprior_eigenvalues = 4, 1, 0.25\nhorizon = 1000\n").unwrap();
    let out = dir.path().join("out");
    let o = tslab(&["bounds", "--config", cfg.to_str().unwrap(), "--horizon", "32"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["d"], 3);
    assert_eq!(r["config"]["horizon"], 32);
    assert!((r["results"]["tr_sigma0"].as_f64().unwrap() - 5.25).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["frobnicate"],
        &["simulate", "--set", "no_such_key=1"],
        &["simulate", "--set", "d=two"],
        &["logconcave", "--noise", "cauchy"],
    ];
    for args in cases {
        let o = tslab(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = tslab(&["bounds"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot write"));

    let o = Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(["bounds", "--out"])
        .arg(dir.path())
        .env("TSLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(&["logconcave", "--replicates", "8", "--horizon", "16", "--set", "theorem3_c=1e-9"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(dir.path())["passed"], false);
}

#[test]
fn nonzero_prior_mean_warns_and_skips_bound_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(&["simulate", "--replicates", "8", "--horizon", "16", "--set", "prior_mean=0.5,0"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let r = report(dir.path());
    assert_eq!(r["warnings"].as_array().unwrap().len(), 1);
    assert!(r["checks"].as_object().unwrap().is_empty());
}

#[test]
fn plot_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(&["decouple", "--replicates", "16", "--horizon", "32", "--plot"], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 2)));
    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
