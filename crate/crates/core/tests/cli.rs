use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gdsg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdsg"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("GDSG_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = gdsg(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &str = "seed = 3\nthreads = 1\n[model]\nhidden_dim = 8\nlayers = 1\n[train]\nepochs = 1\nbatch_size = 8\n[sample]\nchains = 2\n";

#[test]
fn full_pipeline_runs_and_reproduces_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    let train = d.join("lq.jsonl");
    let test = d.join("gt.jsonl");

    ok(d, &["gen-data", "--config", c, "--name", "lq3s6u", "--count", "24", "--out", train.to_str().unwrap()]);
    ok(d, &["gen-data", "--config", c, "--seed", "1000", "--name", "gt3s6u", "--count", "6", "--out", test.to_str().unwrap()]);
    assert!(d.join("lq.jsonl.manifest.json").exists());
    assert!(d.join("gen-data.config.toml").exists());

    let heu = ok(d, &["solve-heu", "--servers", "3", "--users", "6", "--instance-seed", "2"]);
    assert!(heu.contains("\"cost\""));
    let exact = ok(d, &["solve-exact", "--data", test.to_str().unwrap()]);
    assert!(exact.contains("mean ratio to label 1.0000"), "{exact}");

    let m1 = d.join("m1.json");
    ok(d, &["train", "--config", c, "--data", train.to_str().unwrap(), "--checkpoint", m1.to_str().unwrap()]);
    assert!(d.join("metrics.csv").exists());
    let snapshot = d.join("snap.toml");
    fs::copy(d.join("train.config.toml"), &snapshot).unwrap();
    let m2 = d.join("m2.json");
    ok(d, &["train", "--config", snapshot.to_str().unwrap(), "--data", train.to_str().unwrap(), "--checkpoint", m2.to_str().unwrap()]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    let s = ok(d, &["sample", "--config", c, "--model", m1.to_str().unwrap(), "--data", test.to_str().unwrap(), "--index", "2"]);
    assert!(s.contains("\"ratio\""));
    let e = ok(d, &["eval", "--config", c, "--method", "gdsg", "--model", m1.to_str().unwrap(), "--data", test.to_str().unwrap()]);
    assert!(e.starts_with("gdsg on gt3s6u"), "{e}");
    assert!(d.join("eval_gdsg_gt3s6u.csv").exists());
    ok(d, &["eval", "--method", "heu", "--data", test.to_str().unwrap()]);

    let probe = ok(d, &["grad-probe", "--config", c, "--data", train.to_str().unwrap()]);
    assert!(probe.contains("|cos| < 0.15"));
    assert!(d.join("ortho.csv").exists());
}

#[test]
fn gen_data_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b) = (d.join("a.jsonl"), d.join("b.jsonl"));
    ok(d, &["--threads", "1", "gen-data", "--name", "gt3s5u", "--count", "10", "--out", a.to_str().unwrap()]);
    ok(d, &["gen-data", "--name", "gt3s5u", "--count", "10", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn theory_commands_print_known_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["theory", "fig3"]);
    assert!(out.contains("discrete   N=20  first n reaching 0.95: 24"), "{out}");
    assert!(d.join("fig3.csv").exists());
    let bound = ok(d, &["theory", "bound", "--dims", "10", "--epsilon", "0.1", "--sigma2", "0.001", "--p-eps", "0.5", "--a", "0.1"]);
    assert!(bound.contains("\"min_samples\": 7"), "{bound}");
}

#[test]
fn failures_exit_with_kind_specific_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = gdsg(d, &["eval", "--method", "heu", "--data", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(4));
    let line = String::from_utf8(missing.stderr).unwrap();
    assert!(line.starts_with("error: kind=io code=4 msg="), "{line}");

    let bad = d.join("bad.toml");
    fs::write(&bad, "[train]\nepochz = 1\n").unwrap();
    let cfg = gdsg(d, &["--config", bad.to_str().unwrap(), "theory", "fig3"]);
    assert_eq!(cfg.status.code(), Some(3));

    let precondition = gdsg(d, &["theory", "bound", "--dims", "3", "--epsilon", "0.1", "--sigma2", "0.01", "--p-eps", "0.5", "--a", "0.1"]);
    assert_eq!(precondition.status.code(), Some(3));

    let usage = gdsg(d, &["train"]);
    assert_eq!(usage.status.code(), Some(2));
}
