use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rocp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocp"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rocp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TRAIN: &[&str] = &["--epochs", "15", "--valid-size", "80", "--per-class-train", "10"];

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", name, "--nodes", "200", "--classes", "3", "--features", "8", "--seed", "2"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn train(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--dataset", "ds", "--out", out];
    args.extend_from_slice(TRAIN);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn data_lines(csv: &str) -> usize {
    csv.lines().count() - 1
}

#[test]
fn synth_is_deterministic_and_reports_homophily() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a", &[]);
    synth(t.path(), "b", &[]);
    let mut files: Vec<_> = fs::read_dir(t.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(!files.is_empty());
    for f in files {
        let a = fs::read(t.path().join("a").join(&f)).unwrap();
        let b = fs::read(t.path().join("b").join(&f)).unwrap();
        assert_eq!(a, b, "{f:?}");
    }
    let stdout = ok(t.path(), &["synth", "--out", "c", "--nodes", "120", "--classes", "3", "--p-out", "0", "--p-in", "0.2"]);
    assert!(stdout.contains("homophily 1.0000"), "{stdout}");
}

#[test]
fn train_then_eval_single_split() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &[]);
    train(t.path(), "ck", &[]);
    assert!(t.path().join("ck/report.json").exists());
    ok(t.path(), &["eval", "--checkpoint", "ck", "--dataset", "ds", "--splits", "1", "--out", "r.csv"]);
    let csv = fs::read_to_string(t.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("model,dataset,mode,cp_method,epsilon,seed,split_id,coverage,ineff,accuracy\n"));
    assert_eq!(data_lines(&csv), 1);
}

#[test]
fn eval_is_byte_identical_across_runs_and_jobs() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &[]);
    train(t.path(), "ck", &[]);
    let base = ["eval", "--checkpoint", "ck", "--dataset", "ds", "--splits", "12", "--cp-method", "aps,thr", "--seed", "5"];
    for (out, jobs) in [("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")] {
        let mut args = base.to_vec();
        args.extend_from_slice(&["--jobs", jobs, "--out", out]);
        ok(t.path(), &args);
    }
    let a = fs::read(t.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(t.path().join("b.csv")).unwrap());
    assert_eq!(a, fs::read(t.path().join("c.csv")).unwrap());
    assert_eq!(data_lines(std::str::from_utf8(&a).unwrap()), 24);
}

#[test]
fn smaller_epsilon_gives_larger_sets() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &["--signal", "0.4"]);
    train(t.path(), "ck", &[]);
    ok(
        t.path(),
        &["eval", "--checkpoint", "ck", "--dataset", "ds", "--splits", "30", "--cp-method", "thr", "--epsilon", "0.05,0.1", "--out", "r.csv"],
    );
    let csv = fs::read_to_string(t.path().join("r.csv")).unwrap();
    let mean_ineff = |eps: &str| {
        let v: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[4] == eps)
            .map(|c| c[8].parse().unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_ineff("0.050000") >= mean_ineff("0.100000"));
}

#[test]
fn missing_checkpoint_is_one_line_error() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &[]);
    let out = rocp(t.path(), &["eval", "--checkpoint", "nope", "--dataset", "ds", "--out", "r.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:") && err.contains("nope"), "{err}");
    assert!(!t.path().join("r.csv").exists());
}

#[test]
fn ablate_writes_grid_and_wellformed_svg() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &[]);
    let mut args = vec![
        "ablate", "--dataset", "ds", "--models", "gcn,sage", "--calib-fracs", "0,0.5", "--lambdas", "0.001,0.1",
        "--model-seeds", "2", "--splits", "3", "--out", "ab/sweep.csv", "--emit-svg",
    ];
    args.extend_from_slice(TRAIN);
    ok(t.path(), &args);
    let csv = fs::read_to_string(t.path().join("ab/sweep.csv")).unwrap();
    assert_eq!(data_lines(&csv), 2 * 2 * 2 * 2);
    for f in ["accuracy.svg", "ineff.svg"] {
        let svg = fs::read_to_string(t.path().join("ab").join(f)).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert_eq!(svg.matches("<g ").count(), 2);
        assert_eq!(svg.matches("<g ").count(), svg.matches("</g>").count());
        assert_eq!(svg.matches("<svg").count(), 1);
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 2 * 4 + 4);
    }
}

#[test]
fn report_pairs_modes_and_is_idempotent() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds", &[]);
    let mut args = vec!["experiment", "--dataset", "ds", "--model-seeds", "2", "--splits", "4", "--out", "res.csv"];
    args.extend_from_slice(TRAIN);
    ok(t.path(), &args);
    let a = ok(t.path(), &["report", "res.csv", "--csv", "agg1.csv"]);
    let b = ok(t.path(), &["report", "res.csv", "--csv", "agg2.csv"]);
    assert_eq!(a, b);
    assert_eq!(fs::read(t.path().join("agg1.csv")).unwrap(), fs::read(t.path().join("agg2.csv")).unwrap());
    assert!(a.contains('→') && a.contains('%'), "{a}");
    assert!(!a.contains("warning"), "{a}");

    train(t.path(), "ck", &[]);
    ok(t.path(), &["eval", "--checkpoint", "ck", "--dataset", "ds", "--splits", "3", "--out", "single.csv"]);
    let single = ok(t.path(), &["report", "single.csv"]);
    assert!(single.contains("warning"), "{single}");
}

#[test]
fn report_rejects_bad_schema() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("bad.csv"), "a,b,c\n1,2,3\n").unwrap();
    let out = rocp(t.path(), &["report", "bad.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}
