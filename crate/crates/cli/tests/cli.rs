use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use alseg_core::ingestion::load_manifest;
use alseg_core::report::{read_knn_csv, read_rounds_csv};
use alseg_core::similarity::{build_descriptor_index, jsd};
use alseg_core::{SampleId, Split};

fn alseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alseg"))
        .current_dir(dir)
        .env_remove("ALSEG_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: [&str; 8] = ["--train-per-class", "8", "--valid-per-class", "1", "--test-per-class", "3", "--height", "16"];

fn small_dataset(dir: &Path, name: &str) {
    let mut args = vec!["generate", "--out", name, "--width", "16"];
    args.extend(SMALL);
    ok(&alseg(dir, &args));
}

#[test]
fn generate_is_deterministic_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "a");
    small_dataset(dir.path(), "b");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for file in ["manifest.csv", "images/00000.ppm", "masks/00003.pgm"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let ds = load_manifest(&a.join("manifest.csv")).unwrap();
    assert_eq!(ds.ids(Split::Train).len(), 16);
    assert_eq!(ds.ids(Split::Test).len(), 6);
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    ok(&alseg(
        dir.path(),
        &["run", "--dataset", "d", "--method", "label_prop", "--maxr", "3", "--replications", "1", "--k", "4"],
    ));
    let session = dir.path().join("results/d/label_prop/seed0");
    let rounds = read_rounds_csv(&session.join("rounds.csv")).unwrap();
    assert_eq!(rounds.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(rounds.iter().map(|r| r.labeled).collect::<Vec<_>>(), vec![8, 10, 12]);
    for file in ["session.json", "config.txt", "model.txt"] {
        assert!(session.join(file).is_file(), "{file}");
    }
    let config = fs::read_to_string(session.join("config.txt")).unwrap();
    assert!(config.contains("method = label_prop"));
}

#[test]
fn valid_fraction_moves_training_samples_out() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    ok(&alseg(
        dir.path(),
        &["run", "--dataset", "d", "--method", "full_sup", "--replications", "1", "--valid-fraction", "0.25"],
    ));
    let rounds = read_rounds_csv(&dir.path().join("results/d/full_sup/seed0/rounds.csv")).unwrap();
    assert_eq!(rounds[0].labeled, 12);
    let out = alseg(dir.path(), &["run", "--dataset", "d", "--valid-fraction", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_sup_run_has_a_single_round() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    ok(&alseg(dir.path(), &["run", "--dataset", "d", "--method", "full_sup", "--replications", "2"]));
    for seed in 0..2 {
        let rounds = read_rounds_csv(&dir.path().join(format!("results/d/full_sup/seed{seed}/rounds.csv"))).unwrap();
        assert_eq!(rounds.len(), 1);
        assert_eq!(rounds[0].labeled, 16);
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "lambda = 0.1\nnot_a_key = 3\n").unwrap();
    let cases: [&[&str]; 5] = [
        &["run", "--config", "bad.conf"],
        &["run", "--method", "wsl"],
        &["run", "--lambda", "abc"],
        &["sweep", "--values", ""],
        &["knn-inspect", "--id", "100000"],
    ];
    for args in cases {
        let out = alseg(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = alseg(dir.path(), &["run", "--config", "bad.conf"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = alseg(dir.path(), &["run", "--dataset", "no/such/manifest.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_keys_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = alseg(dir.path(), &["run", "--help"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--lambda", "--k", "--maxr", "--per-class-first-round", "--inner-repeats", "--config"] {
        assert!(text.contains(flag), "{flag}");
    }
    let top = String::from_utf8_lossy(&alseg(dir.path(), &["--help"]).stdout).into_owned();
    assert!(top.contains("ALSEG_SEED") && top.contains("Exit codes"));
}

#[test]
fn env_seed_sits_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    fs::write(dir.path().join("c.conf"), "seed = 3\nmaxr = 1\nreplications = 1\nmethod = random\n").unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_alseg"));
        cmd.current_dir(dir.path()).env_remove("ALSEG_SEED");
        if let Some(v) = env {
            cmd.env("ALSEG_SEED", v);
        }
        cmd.args(["run", "--config", "c.conf", "--dataset", "d"]).args(extra);
        ok(&cmd.output().unwrap());
    };
    run(None, &[]);
    run(Some("5"), &[]);
    run(Some("5"), &["--seed", "7"]);
    for seed in [3, 5, 7] {
        assert!(dir.path().join(format!("results/d/random/seed{seed}/rounds.csv")).is_file(), "seed {seed}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    let args = |out: &'static str| {
        ["run", "--dataset", "d", "--method", "label_prop,entropy", "--maxr", "3", "--replications", "2", "--out", out]
    };
    ok(&alseg(dir.path(), &args("r1")));
    ok(&alseg(dir.path(), &args("r2")));
    for rel in ["d/label_prop/seed1/rounds.csv", "d/entropy/seed0/rounds.csv", "d/compare.csv", "d/compare_rounds.csv"] {
        let a = fs::read(dir.path().join("r1").join(rel)).unwrap();
        let b = fs::read(dir.path().join("r2").join(rel)).unwrap();
        assert_eq!(a, b, "{rel}");
    }
}

#[test]
fn compare_and_plot_read_finished_sessions() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    ok(&alseg(dir.path(), &["run", "--dataset", "d", "--method", "random,label_prop", "--maxr", "2", "--replications", "2"]));
    let before = fs::read(dir.path().join("results/d/compare.csv")).unwrap();
    fs::remove_file(dir.path().join("results/d/compare.csv")).unwrap();
    ok(&alseg(dir.path(), &["compare", "--results", "results/d"]));
    assert_eq!(fs::read(dir.path().join("results/d/compare.csv")).unwrap(), before);
    ok(&alseg(dir.path(), &["plot", "--input", "results/d/compare_rounds.csv", "--output", "dice.svg"]));
    let svg = fs::read_to_string(dir.path().join("dice.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("label_prop"));
}

#[test]
fn single_value_sweep_reproduces_run_auc() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    let common = ["--dataset", "d", "--method", "label_prop", "--maxr", "3", "--seed", "2"];
    let mut run = vec!["run", "--replications", "1", "--lambda", "0.5"];
    run.extend(common);
    ok(&alseg(dir.path(), &run));
    let mut sweep = vec!["sweep", "--param", "lambda", "--values", "0.5"];
    sweep.extend(common);
    ok(&alseg(dir.path(), &sweep));
    let compare = fs::read_to_string(dir.path().join("results/d/label_prop/aggregate.csv")).unwrap();
    let run_auc: f64 = compare.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let swept = fs::read_to_string(dir.path().join("results/d/sweep_lambda.csv")).unwrap();
    let sweep_auc: f64 = swept.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(run_auc, sweep_auc);
}

#[test]
fn knn_inspect_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d");
    ok(&alseg(dir.path(), &["knn-inspect", "--dataset", "d", "--id", "2", "--k", "3"]));
    let rows = read_knn_csv(&fs::read_to_string(dir.path().join("results/d/knn_2.csv")).unwrap()).unwrap();
    let ds = load_manifest(&dir.path().join("d/manifest.csv")).unwrap();
    let desc = build_descriptor_index(&ds, 32);
    let class = ds.sample(SampleId(2)).class_label;
    let mut all: Vec<(f64, SampleId)> = ds
        .ids(Split::Train)
        .into_iter()
        .filter(|&id| id != SampleId(2) && ds.sample(id).class_label == class)
        .map(|id| (jsd(&desc[&SampleId(2)], &desc[&id]).unwrap(), id))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let want: BTreeMap<usize, (SampleId, f64)> = all.into_iter().take(3).map(|(d, id)| (id, d)).enumerate().collect();
    assert_eq!(rows.len(), 3);
    for (rank, &(query, neighbor, distance)) in rows.iter().enumerate() {
        assert_eq!(query, 2);
        assert_eq!(SampleId(neighbor), want[&rank].0);
        assert!((distance - want[&rank].1).abs() < 1e-12);
    }
}
