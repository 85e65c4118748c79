use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn itdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itdec")).args(args).output().expect("failed to spawn itdec")
}

fn ok(args: &[&str]) -> String {
    let out = itdec(args);
    assert!(
        out.status.success(),
        "itdec {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = itdec(args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

// A small model so end-to-end runs finish in seconds.
const TINY: [&str; 12] = [
    "--set", "layers=1", "--set", "d_model=16", "--set", "d_ff=32", "--set", "heads=2", "--set", "checkpoint_every=5",
    "--log-every", "0",
];

#[test]
fn gen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen", "pcfg", "--out", s(dir), "--seed", "7", "--n", "1000", "--n-test", "50"]);
    }
    let train = fs::read(a.join("train.tsv")).unwrap();
    assert_eq!(train, fs::read(b.join("train.tsv")).unwrap());
    assert_eq!(fs::read(a.join("test.tsv")).unwrap(), fs::read(b.join("test.tsv")).unwrap());
    assert_eq!(lines(&a.join("train.tsv")).len(), 1000);
    assert!(lines(&a.join("train.tsv")).iter().all(|l| l.split('\t').count() == 2));

    let c = tmp.path().join("c");
    ok(&["gen", "pcfg", "--out", s(&c), "--seed", "8", "--n", "1000"]);
    assert_ne!(train, fs::read(c.join("train.tsv")).unwrap());
}

#[test]
fn gen_cartesian_writes_each_test_size() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path();
    ok(&["gen", "cartesian", "--out", s(out), "--n", "30", "--n-test", "5", "--tests", "6x5,5x6,6x6"]);
    let mut names: Vec<String> = fs::read_dir(out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["test-5x6.tsv", "test-6x5.tsv", "test-6x6.tsv", "train.tsv"]);
    assert_eq!(lines(&out.join("test-6x6.tsv")).len(), 5);
}

#[test]
fn gen_refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    let out = s(tmp.path());
    ok(&["gen", "pcfg", "--out", out, "--n", "10"]);
    let (c, err) = code(&["gen", "pcfg", "--out", out, "--n", "10"]);
    assert_eq!(c, 2, "{err}");
    ok(&["gen", "pcfg", "--out", out, "--n", "10", "--force"]);
}

#[test]
fn expand_produces_one_line_per_step() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "cartesian", "--out", s(dir), "--n", "10", "--train-max", "2", "--tests", "2x2", "--n-test", "10"]);
    let expanded = dir.join("steps.tsv");
    let input = dir.join("test-2x2.tsv");
    ok(&["expand", "--task", "cartesian", "--input", s(&input), "--output", s(&expanded), "--expansion", "token"]);
    // Four output tokens per 2x2 example, one step each.
    assert_eq!(lines(&expanded).len(), 40);

    let rows = dir.join("rows.tsv");
    ok(&["expand", "--task", "cartesian", "--input", s(&input), "--output", s(&rows), "--expansion", "row"]);
    assert_eq!(lines(&rows).len(), 20);
}

#[test]
fn expand_reports_bad_lines_with_location() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("bad.tsv");
    fs::write(&input, "copy a b\ta b\nno tab here\n").unwrap();
    let out = tmp.path().join("out.tsv");
    let (c, err) = code(&["expand", "--task", "pcfg", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("bad.tsv:2"), "{err}");
}

#[test]
fn never_halt_stub_yields_invalid_predictions() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "pcfg", "--out", s(dir), "--n", "20"]);
    let preds = dir.join("preds.tsv");
    ok(&[
        "predict", "--stub", "never-halt", "--task", "pcfg", "--input", s(&dir.join("train.tsv")), "--output",
        s(&preds), "--max-steps", "4",
    ]);
    let rows = lines(&preds);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        let cols: Vec<&str> = r.split('\t').collect();
        assert_eq!(cols.len(), 4, "{r}");
        assert!(cols[1].is_empty(), "{r}");
        assert_ne!(cols[3], "eoi", "{r}");
    }
    let traces = lines(&dir.join("traces.jsonl"));
    // One record per step; every example runs out of steps.
    assert_eq!(traces.len(), 20 * 4);
    assert!(traces.iter().filter(|l| l.contains("\"halt\"")).count() == 20, "{traces:?}");

    let stdout = ok(&["eval", "--predictions", s(&preds), "--task", "pcfg"]);
    assert!(stdout.contains("accuracy 0.0000"), "{stdout}");
}

#[test]
fn oracle_stub_scores_perfectly() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "cartesian", "--out", s(dir), "--n", "10", "--tests", "3x4", "--n-test", "12"]);
    let input = dir.join("test-3x4.tsv");
    let preds = dir.join("oracle.tsv");
    ok(&["predict", "--stub", "oracle", "--task", "cartesian", "--input", s(&input), "--output", s(&preds)]);
    let stdout = ok(&["eval", "--predictions", s(&preds), "--task", "cartesian", "--gold", s(&input)]);
    assert!(stdout.contains("accuracy 1.0000 (12/12)"), "{stdout}");
}

#[test]
fn gold_as_prediction_scores_one() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "pcfg", "--out", s(dir), "--n", "25"]);
    let gold = dir.join("train.tsv");
    let stdout = ok(&["eval", "--predictions", s(&gold), "--gold", s(&gold), "--task", "pcfg", "--out", s(dir)]);
    assert!(stdout.contains("accuracy 1.0000 (25/25)"), "{stdout}");
    let csv = lines(&dir.join("metrics.csv"));
    assert!(csv[0].starts_with("split,op_count,total,correct,accuracy"), "{csv:?}");
    assert!(csv.iter().any(|l| l.starts_with("train,all,25,25,1.000000")), "{csv:?}");
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    // clap usage errors
    assert_eq!(code(&["train"]).0, 2);
    assert_eq!(code(&["gen", "nosuchtask"]).0, 2);
    // semantic usage errors
    assert_eq!(code(&["predict", "--stub", "oracle", "--input", "x.tsv"]).0, 3, "missing input is an I/O error");
    let missing = tmp.path().join("missing.tsv");
    assert_eq!(code(&["eval", "--predictions", s(&missing), "--task", "pcfg"]).0, 3);
    assert_eq!(code(&["gen", "pcfg", "--out", s(tmp.path()), "--expansion", "row"]).0, 2);
    let input = tmp.path().join("in.tsv");
    fs::write(&input, "copy a\ta\n").unwrap();
    let (c, err) = code(&["expand", "--task", "pcfg", "--expansion", "row", "--input", s(&input), "--output", "o.tsv"]);
    assert_eq!(c, 2, "{err}");
    let run = tmp.path().join("run");
    let (c, err) = code(&["train", "--preset", "cartesian-row", "--task", "pcfg", "--train", s(&input), "--run-dir", s(&run)]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("contradicts --preset cartesian-row"), "{err}");
    let (c, err) = code(&["train", "--preset", "cartesian-row", "--expansion", "token", "--train", s(&input), "--run-dir", s(&run)]);
    assert_eq!(c, 2, "{err}");
    assert!(!run.exists());
}

#[test]
fn train_predict_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "pcfg", "--out", s(dir), "--n", "40", "--n-test", "8", "--ops", "1..2", "--literal-len", "1..3"]);
    let run = dir.join("run");
    let train = dir.join("train.tsv");
    let mut args = vec!["train", "--task", "pcfg", "--mode", "iterative", "--train", s(&train)];
    args.extend(["--run-dir", s(&run), "--steps", "10", "--batch-size", "8", "--seed", "3"]);
    args.extend(TINY);
    ok(&args);
    for f in ["config.txt", "vocab.txt", "metadata.txt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let meta = fs::read_to_string(run.join("metadata.txt")).unwrap();
    assert!(meta.contains("final_step"), "{meta}");

    ok(&["predict", "--run-dir", s(&run), "--input", s(&dir.join("test.tsv")), "--max-steps", "3"]);
    assert_eq!(lines(&run.join("predictions.tsv")).len(), 8);
    assert!(run.join("traces.jsonl").is_file());
    let stdout = ok(&["eval", "--run-dir", s(&run)]);
    assert!(stdout.contains("test: accuracy"), "{stdout}");
    assert!(run.join("metrics.csv").is_file());
    assert!(run.join("errors.txt").is_file());

    // Flags that contradict the run are refused.
    let (c, err) = code(&["predict", "--run-dir", s(&run), "--input", s(&dir.join("test.tsv")), "--mode", "seq2seq"]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("+ mode = seq2seq"), "{err}");

    // Retraining into an existing run needs --force or --resume.
    assert_eq!(code(&args).0, 2);

    // Resuming with a different model is refused with a diff.
    let mut changed = vec!["train", "--task", "pcfg", "--mode", "iterative", "--train", s(&train)];
    changed.extend(["--run-dir", s(&run), "--steps", "20", "--batch-size", "8", "--seed", "3", "--resume"]);
    changed.extend(TINY);
    changed.extend(["--set", "d_ff=48"]);
    let (c, err) = code(&changed);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("- d_ff = 32") && err.contains("+ d_ff = 48"), "{err}");

    // Resuming with a longer schedule continues from the last checkpoint.
    changed.truncate(changed.len() - 2);
    ok(&changed);
    let meta = fs::read_to_string(run.join("metadata.txt")).unwrap();
    assert!(meta.contains("resumed_from = 10"), "{meta}");
    assert!(meta.contains("final_step = 20"), "{meta}");
}

#[test]
fn replicas_train_and_evaluate_together() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["gen", "cartesian", "--out", s(dir), "--n", "30", "--train-max", "2", "--tests", "2x2", "--n-test", "4"]);
    let run = dir.join("run");
    let train = dir.join("train.tsv");
    let mut args = vec!["train", "--task", "cartesian", "--mode", "seq2seq", "--train", s(&train)];
    args.extend(["--run-dir", s(&run), "--steps", "5", "--batch-size", "4", "--replicas", "2", "--seed", "10"]);
    args.extend(TINY);
    ok(&args);
    assert!(run.join("seed-10/config.txt").is_file());
    assert!(run.join("seed-11/config.txt").is_file());

    ok(&["predict", "--run-dir", s(&run), "--input", s(&dir.join("test-2x2.tsv"))]);
    let stdout = ok(&["eval", "--run-dir", s(&run)]);
    assert!(stdout.contains("mean accuracy over 2 replicas"), "{stdout}");
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.contains("seed-10/test-2x2,") && csv.contains("seed-11/test-2x2,"), "{csv}");
}
