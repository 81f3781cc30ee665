//! The `casn` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn casn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn assert_sidecar(dir: &Path, name: &str) {
    let hash = read(&dir.join(format!("{name}.sha256")));
    assert_eq!(hash.trim().len(), 64, "{name}");
    assert!(hash.trim().chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn oracle_prints_key_value_report() {
    let o = casn(&["oracle", &config("cat_legs.scm")]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("pn=0.5\n") && text.contains("ps=1\n"), "{text}");
    let o = casn(&["oracle", &config("eye_size.scm"), "--c", "1", "--c-bar", "0.5", "--y", "1"]);
    assert!(stdout(&o).contains("ps=3\n"));
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();
    assert!(casn(&["synth", "--n", "300", "--seed", "2", "--out", &p("train")]).status.success());
    assert!(casn(&["synth", "--n", "60", "--seed", "2", "--start", "300", "--out", &p("eval")])
        .status
        .success());
    let csv = read(&d.join("train/synth.csv"));
    assert!(csv.starts_with("x_0,"));
    assert_eq!(csv.lines().count(), 301);
    assert_sidecar(&d.join("train"), "synth.csv");

    std::fs::write(d.join("t.cfg"), "# short run\ntotal_steps = 40\nmax_every = 20\nrep_dim = 8\nlr_min = 0.1\n").unwrap();
    let o = casn(&["train", "--config", &p("t.cfg"), "--data", &p("train/synth.csv"), "--out", &p("run")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read(&d.join("run/trace.csv"));
    assert!(trace.starts_with("step,sf,m,kl_c,kl_cbar,hinge\n"));
    assert_eq!(trace.lines().count(), 41);
    for f in ["trace.csv", "risk.csv"] {
        assert_sidecar(&d.join("run"), f);
    }

    let o = casn(&[
        "eval",
        "--checkpoint",
        &p("run/checkpoint.txt"),
        "--data",
        &p("eval/synth.csv"),
        "--s",
        "0.1",
        "--out",
        &p("ev"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ev = read(&d.join("ev/eval.csv"));
    let mut lines = ev.lines();
    assert_eq!(lines.next(), Some("delta,s,seed,dcor_sn,dcor_sf,dcor_nc,dcor_sp,accuracy"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], &["1.1", "0.1", "0"]);
    for v in &row[3..] {
        let x: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
}

#[test]
fn training_abort_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();
    assert!(casn(&["synth", "--n", "100", "--out", &p("data")]).status.success());
    std::fs::write(d.join("t.cfg"), "total_steps = 50\nrep_dim = 4\nlr_min = 1e200\nvariant = casn_minus_m\n").unwrap();
    let o = casn(&["train", "--config", &p("t.cfg"), "--data", &p("data/synth.csv"), "--out", &p("run")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert!(d.join("run/trace.csv").exists());
    assert!(!d.join("run/checkpoint.txt").exists());
}

#[test]
fn bounds_writes_both_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let o = casn(&["bounds", "--instances", "12", "--trials", "10", "--mc", "32", "--out", &out]);
    assert!(o.status.success());
    let csv = read(&dir.path().join("bounds.csv"));
    assert!(csv.starts_with("instance_id,lhs,rhs,beta_inf,eta,holds\n"));
    assert_eq!(csv.lines().count(), 1 + 12 + 10);
    assert!(csv.lines().filter(|l| l.starts_with("shift-")).all(|l| l.ends_with(",true")));
    assert_sidecar(dir.path(), "bounds.csv");
}

#[test]
fn repro_exit_status_follows_checks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();

    std::fs::write(d.join("empty.cfg"), "[grid]\nvariant =\n").unwrap();
    let o = casn(&["repro", "--config", &p("empty.cfg"), "--out", &p("empty")]);
    assert!(o.status.success());
    assert_eq!(read(&d.join("empty/summary.csv")).lines().count(), 1);

    let failing = "[synth]\nn_train = 100\nn_eval = 20\n[train]\ntotal_steps = 10\nrep_dim = 4\n[checks]\ndcor_sn_min = 1.01\n";
    std::fs::write(d.join("fail.cfg"), failing).unwrap();
    let o = casn(&["repro", "--config", &p("fail.cfg"), "--out", &p("fail")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL separation"));
    assert_sidecar(&d.join("fail"), "summary.csv");

    std::fs::write(d.join("bad.cfg"), "seed = 1\n[train]\nwarmup = 3\n").unwrap();
    let o = casn(&["repro", "--config", &p("bad.cfg")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.warmup"));
}
