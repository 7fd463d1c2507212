use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spdelab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spdelab"));
    cmd.args(args).env_remove("SPDELAB_OUT");
    if let Some(dir) = env_out {
        cmd.env("SPDELAB_OUT", dir);
    }
    cmd.output().expect("spawn spdelab")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn records(out: &Path, experiment: &str) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join(format!("{experiment}.jsonl")))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SIMULATE: &str = "# small Burgers run\nmodel.kind = burgers\ncells = 64\nt_end = 0.5\nknots_per_unit = 512\n";

#[test]
fn simulate_writes_record_and_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.cfg", SIMULATE);
    let out = tmp.path().join("out");
    let o = spdelab(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "4", "--workers", "2", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(&out, "simulate");
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!(r["status"], "pass");
    assert_eq!(r["seed"], 4);
    assert_eq!(r["monitors"].as_array().unwrap().len(), 11);
    let hash = r["config_hash"].as_str().unwrap();
    let dir = out.join(&hash[..16]);
    let monitors = fs::read_to_string(dir.join("monitors.csv")).unwrap();
    assert!(monitors.starts_with("t,l1,l2,linf,bv,mass,q_eps,q_diss\n"));
    assert!(dir.join("final_state.csv").exists() && dir.join("path.csv").exists());
}

#[test]
fn same_seed_gives_identical_monitor_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.cfg", SIMULATE);
    let mut csvs = Vec::new();
    for (k, workers) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("out{k}"));
        let o = spdelab(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9", "--workers", workers, "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0));
        let hash = records(&out, "simulate")[0]["config_hash"].as_str().unwrap().to_string();
        csvs.push(fs::read(out.join(&hash[..16]).join("monitors.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn env_var_overrides_out_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.cfg", SIMULATE);
    let flag = tmp.path().join("flag");
    let env = tmp.path().join("env");
    let o = spdelab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", flag.to_str().unwrap()], Some(&env));
    assert_eq!(o.status.code(), Some(0));
    assert!(env.join("simulate.jsonl").exists());
    assert!(!flag.exists());
}

#[test]
fn config_errors_exit_with_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("typo.cfg", "model.kindd = burgers\n"),
        ("lambda.cfg", "lambda = 0.7\ntheta = 1\n"),
        ("mismatch.cfg", "experiment = decay\n"),
    ];
    for (name, text) in cases {
        let cfg = write_config(tmp.path(), name, text);
        let o = spdelab(&["regularity", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
}

#[test]
fn linear_path_stability_reports_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "floor.cfg",
        "model.eps = 0.01\ncells = 32\nt_end = 0.25\npath = deterministic\nknots_per_unit = 256\nmc_paths = 2\nlevels = 2-4\n",
    );
    let out = tmp.path().join("out");
    let o = spdelab(&["stability", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(records(&out, "stability")[0]["status"], "floor");
}

#[test]
fn runtime_failure_still_writes_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "linear.cfg", "model.kind = linear\n");
    let out = tmp.path().join("out");
    let o = spdelab(&["theta", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let r = &records(&out, "theta")[0];
    assert_eq!(r["status"], "fail");
    assert!(r["summary"]["error"].as_str().unwrap().contains("degenerate"));
}

#[test]
fn records_append_and_lemmas_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lemmas.cfg", "experiment = lemmas\n");
    let out = tmp.path().join("out");
    for _ in 0..2 {
        let o = spdelab(&["lemmas", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0));
    }
    let recs = records(&out, "lemmas");
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0]["fits"], recs[1]["fits"]);
}
