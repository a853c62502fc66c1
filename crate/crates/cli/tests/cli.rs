use std::path::Path;
use std::process::{Command, Output};

fn wsntopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsntopo")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wsntopo(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_baseline_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("n6.txt");
    ok(&["gen", "--nodes", "6", "--radius", "500", "--seed", "3", "--out", p(&inst)]);
    assert_eq!(ok(&["gen", "--nodes", "6", "--radius", "500", "--seed", "3"]), std::fs::read_to_string(&inst).unwrap());

    let csv = ok(&["baseline", "--instance", p(&inst), "--oracle"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,lifetime,lifetime_continuous");
    assert_eq!(lines.len(), 5);
    let life = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    let oracle = life(lines[4]);
    assert!(lines[1..].iter().all(|l| life(l) <= oracle));

    let best = dir.path().join("best.txt");
    let text = ok(&["oracle", "--instance", p(&inst), "--out", p(&best)]);
    assert!(text.contains("trees 1296"));
    assert!(best.is_file());
}

#[test]
fn train_resume_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "train", "--nodes", "5", "--seed", "2", "--iterations", "2", "--episodes", "2", "--sims", "6", "--batch", "4",
        "--eval-count", "3", "--conv-blocks", "1", "--filters", "4", "--value-hidden", "8", "--remove", "2:4",
        "--out", p(&out),
    ];
    ok(&args);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().nth(2).unwrap().contains(",remove 4,"));
    for f in ["config.toml", "instance.txt", "baselines.csv", "timing.csv", "topologies/final_greedy.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let ckpt = out.join("checkpoints/iter_0002");
    let text = ok(&["eval", "--checkpoint", p(&ckpt), "--eval-count", "5"]);
    assert!(text.starts_with("trees 5 "));
    let text = ok(&["resume", "--out", p(&out)]);
    assert!(text.contains("completed 2 iterations"));
}

#[test]
fn errors_exit_nonzero() {
    let bad_remove = wsntopo(&["train", "--nodes", "5", "--remove", "3-4", "--out", "/nonexistent/x"]);
    assert!(!bad_remove.status.success());
    assert!(String::from_utf8_lossy(&bad_remove.stderr).contains("expected ITERATION:ID"));
    let gateway = wsntopo(&["train", "--nodes", "5", "--iterations", "3", "--remove", "2:0"]);
    assert!(!gateway.status.success());
    assert!(String::from_utf8_lossy(&gateway.stderr).contains("gateway"));
    let big = wsntopo(&["baseline", "--nodes", "20", "--oracle"]);
    assert!(!big.status.success());
    let missing = wsntopo(&["oracle", "--instance", "/nonexistent/instance.txt"]);
    assert_eq!(missing.status.code(), Some(1));
}
