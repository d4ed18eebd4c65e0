use std::path::Path;
use std::process::{Command, Output};

use fvmod_core::harness::{EpsGrid, ExperimentConfig, Mode, HEADER};

fn fvmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvmod"))
        .args(args)
        .env("FVMOD_THREADS", "2")
        .output()
        .expect("fvmod runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    let out = fvmod(&["coalesce", "--measure", "beta:1.5", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvmod(&["rho", "--measure", "beta:2.5", "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = fvmod(&["nvcheck", "--measure", "beta:1.5", "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2), "nv_check without s values");
}

#[test]
fn budget_refusal_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvmod(&[
        "lookdown", "--measure", "kingman:1", "--n", "1000", "--dim", "3", "--horizon", "1", "--checkpoints",
        "dyadic:4", "--budget", "10000", "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn io_errors_name_the_path_and_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "0,1,1\n").unwrap();
    let out = fvmod(&["ancestry", "--in", s(&missing), "--pairs", s(&pairs), "--out", s(&dir.path().join("a.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn config_file_and_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Mode::Global, "kingman:1");
    cfg.n = 60;
    cfg.eps_grid = EpsGrid { k_min: 3, k_max: 5 };
    cfg.replicas = 4;
    cfg.seed = 11;
    cfg.c_values = vec![1.0, 3.0];
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(fvmod(&["modulus", "global", "--config", s(&cfg_path), "--out", s(&a)]).status.success());
    let flags = [
        "modulus", "global", "--measure", "kingman:1", "--n", "60", "--eps", "3:5", "--reps", "4", "--seed", "11",
        "--c-values", "1,3", "--out", s(&b),
    ];
    assert!(fvmod(&flags).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with(HEADER));
    assert!(text.contains("violation_fraction_c3"));
    assert!(text.contains("attained_fraction_c1"));
}

#[test]
fn ancestry_reports_dislocations_of_a_stored_path() {
    let dir = tempfile::tempdir().unwrap();
    let path_dir = dir.path().join("path");
    let out = fvmod(&[
        "lookdown", "--measure", "beta:1.5", "--n", "30", "--horizon", "1", "--checkpoints", "list:0.5,0.75",
        "--seed", "9", "--out", s(&path_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["events.csv", "positions.csv", "meta.json"] {
        assert!(path_dir.join(f).exists(), "{f} missing");
    }
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "r,s,t\n0.5,0.75,0.75\n0.5,0.75,0.5\n").unwrap();
    let csv = dir.path().join("anc.csv");
    let args = ["ancestry", "--in", s(&path_dir), "--pairs", s(&pairs), "--out", s(&csv)];
    // s > t is rejected
    assert_eq!(fvmod(&args).status.code(), Some(2));
    std::fs::write(&pairs, "r,s,t\n0.5,0.75,0.75\n0,0.5,0.75\n").unwrap();
    assert!(fvmod(&args).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,s,t,N_rt,H,h_eps,ratio");
    assert_eq!(lines.len(), 3);
    let fields: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(fields[3] >= 1.0 && fields[3] <= 30.0);
    assert!((fields[4] / fields[5] - fields[6]).abs() < 1e-12);
    let from_start: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(from_start[3] <= fields[3], "fewer ancestors further back");
}
