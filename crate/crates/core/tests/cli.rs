use std::path::Path;
use std::process::{Command, Output};

use pren::predictor::parse_key_values;

const FAST: [&str; 8] = ["--set", "k=4", "--set", "max_iter=2", "--set", "batches_per_iter=10", "--set", "init_epochs=1"];

fn pren(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pren")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pren(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, holdout: &str) {
    ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "8",
        "--seen",
        "5",
        "--per-class",
        "12",
        "--seen-holdout",
        holdout,
    ]);
}

#[test]
fn synth_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("task");
    let run = tmp.path().join("run");
    synth(&data, "0");
    for f in ["features.txt", "labels.txt", "attributes.txt", "split.txt", "config.cfg"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()];
    args.extend(FAST);
    ok(&args);
    for f in ["model.ckpt", "projections.bin", "history.tsv", "config.cfg", "run.info"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(run.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let report = ok(&["eval", "--run", run.to_str().unwrap()]);
    assert!(report.contains("per-class top-1"));
    let metrics = parse_key_values(&std::fs::read_to_string(run.join("metrics.txt")).unwrap()).unwrap();
    let top1 = metrics["per_class_top1"];
    assert!((0.0..=1.0).contains(&top1));
    assert!(metrics.contains_key("macc"));
    assert!(!metrics.contains_key("h"));

    // training is reproducible from the same inputs
    let run2 = tmp.path().join("run2");
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", run2.to_str().unwrap()];
    args.extend(FAST);
    ok(&args);
    assert_eq!(std::fs::read(run.join("model.ckpt")).unwrap(), std::fs::read(run2.join("model.ckpt")).unwrap());
    assert_eq!(history, std::fs::read_to_string(run2.join("history.tsv")).unwrap());

    let proj = tmp.path().join("p.bin");
    ok(&["project", "--data", data.to_str().unwrap(), "--set", "k=4", "--out", proj.to_str().unwrap()]);
    assert_eq!(std::fs::read(&proj).unwrap(), std::fs::read(run.join("projections.bin")).unwrap());
}

#[test]
fn generalized_eval_reports_harmonic_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("task");
    let run = tmp.path().join("run");
    synth(&data, "0.25");
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()];
    args.extend(FAST);
    ok(&args);
    ok(&["eval", "--run", run.to_str().unwrap()]);
    let metrics = parse_key_values(&std::fs::read_to_string(run.join("metrics.txt")).unwrap()).unwrap();
    for key in ["u", "s", "h"] {
        assert!((0.0..=1.0).contains(&metrics[key]), "{key}");
    }
}

#[test]
fn sweep_and_ablate_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("task");
    synth(&data, "0");
    let d = data.to_str().unwrap();

    let mut args = vec!["sweep", "--data", d, "--param", "h", "--values", "2,4,6,8"];
    args.extend(FAST);
    let table = ok(&args);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "{table}");
    assert!(lines[0].starts_with("h\tper_class_top1"));
    assert_eq!(lines.iter().skip(1).map(|l| l.split('\t').next().unwrap()).collect::<Vec<_>>(), ["2", "4", "6", "8"]);

    let out = tmp.path().join("ablate.tsv");
    let mut args = vec!["ablate", "--data", d, "--out", out.to_str().unwrap()];
    args.extend(FAST);
    let table = ok(&args);
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["full", "single_classifier", "no_projection"]);
    assert_eq!(std::fs::read_to_string(out).unwrap(), table);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(pren(&["train"]).status.code(), Some(1));
    assert_eq!(pren(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pren(&["--help"]).status.code(), Some(0));

    let missing = tmp.path().join("nope");
    let out = pren(&["train", "--data", missing.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let data = tmp.path().join("task");
    synth(&data, "0");
    let out = pren(&["train", "--data", data.to_str().unwrap(), "--out", "unused", "--set", "rho=lots"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pren(&["train", "--data", data.to_str().unwrap(), "--out", "unused", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(data.join("split.txt"), "seen: 1,2,3,4,5\nunseen: 5,6,7,8\n").unwrap();
    let out = pren(&["train", "--data", data.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split.txt"));
}
