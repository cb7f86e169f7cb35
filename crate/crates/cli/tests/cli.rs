use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aspect-bias"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {text:?}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

fn simulate(dir: &Path) {
    let out = run(
        &[
            "simulate", "--output", "sim.csv", "--users", "40", "--items", "15", "--aspects", "2",
            "--groups", "2", "--density", "0.4", "--cutpoints=-1.5,-0.5,0.5,1.5", "--separation",
            "2", "--seed", "11",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const FIT: &[&str] = &["fit", "--input", "sim.csv", "--groups", "3", "--burn-in", "20", "--samples", "10"];

#[test]
fn fits_with_the_same_seed_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    for (name, extra) in [("a.bin", None), ("b.bin", None), ("c.bin", Some("--serial"))] {
        let mut args = FIT.to_vec();
        args.extend(["--seed", "7", "--output", name]);
        args.extend(extra);
        let out = run(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_eq!(read("a.bin"), read("c.bin"));
    let mut args = FIT.to_vec();
    args.extend(["--seed", "8", "--output", "d.bin"]);
    assert!(run(&args, dir.path()).status.success());
    assert_ne!(read("a.bin"), read("d.bin"));

    for suffix in [".toml", ".manifest.json", ".log.tsv"] {
        assert!(dir.path().join(format!("a.bin{suffix}")).exists(), "missing {suffix}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read("a.bin.manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 7);
    for key in ["config_hash", "dataset_hash", "git_describe"] {
        assert!(manifest[key].as_str().is_some_and(|s| !s.is_empty()), "{key}");
    }
}

#[test]
fn sidecar_reproduces_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let mut args = FIT.to_vec();
    args.extend(["--seed", "3", "--output", "a.bin"]);
    assert!(run(&args, dir.path()).status.success());
    let out = run(
        &["fit", "--input", "sim.csv", "--config", "a.bin.toml", "--output", "b.bin"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("a.bin")).unwrap(),
        std::fs::read(dir.path().join("b.bin")).unwrap()
    );
}

#[test]
fn strict_prediction_rejects_unknown_user() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let mut args = FIT.to_vec();
    args.extend(["--output", "m.bin"]);
    assert!(run(&args, dir.path()).status.success());
    std::fs::write(dir.path().join("pairs.csv"), "user_id,item_id\nu0,i1\nghost,i1\n").unwrap();

    let strict = run(
        &["predict", "--archive", "m.bin", "--input", "pairs.csv", "--output", "p.tsv", "--strict"],
        dir.path(),
    );
    assert_eq!(strict.status.code(), Some(1));
    assert_eq!(stderr_json(&strict)["error"], "UnknownUser");

    let lenient = run(
        &["predict", "--archive", "m.bin", "--input", "pairs.csv", "--output", "p.tsv"],
        dir.path(),
    );
    assert!(lenient.status.success());
    let table = std::fs::read_to_string(dir.path().join("p.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["user_id", "item_id", "aspect1", "aspect2", "aspect1_bias", "aspect2_bias"]);
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        for x in &row[2..4] {
            let v: f64 = x.parse().unwrap();
            assert!((1.0..=5.0).contains(&v));
        }
        for label in &row[4..] {
            assert!(["positive", "negative", "neutral"].contains(label));
        }
    }
}

#[test]
fn evaluate_reports_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = run(
        &[
            "evaluate", "--input", "sim.csv", "--output", "ev", "--model", "ordinal-no-bias",
            "--folds", "5", "--burn-in", "20", "--samples", "10", "--compare", "full",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ev = dir.path().join("ev");
    let report = std::fs::read_to_string(ev.join("report.tsv")).unwrap();
    let summary: Vec<Vec<&str>> = report
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .filter(|r: &Vec<&str>| r[0] == "ordinal-no-bias")
        .collect();
    for metric in ["rmse", "fcp"] {
        for aspect in ["aspect1", "aspect2"] {
            let row = summary
                .iter()
                .find(|r| r[1] == metric && r[2] == aspect)
                .unwrap_or_else(|| panic!("missing {metric} {aspect}"));
            assert!(row[3].parse::<f64>().unwrap().is_finite(), "{metric} {aspect}");
        }
    }
    for metric in ["rmse", "test_loglik", "aspect_ranking_pearson"] {
        assert!(summary.iter().any(|r| r[1] == metric && r[2] == "all"), "{metric}");
    }
    assert!(report.lines().any(|l| l.starts_with("ordinal-no-bias:fold5\t")));
    assert!(report.lines().any(|l| l.starts_with("full\t")));
    for file in [
        "test_loglik.tsv",
        "loglik_tests.tsv",
        "category_curves.tsv",
        "group_bias.tsv",
        "group_sd.tsv",
        "intrinsic_deltas.tsv",
        "delta_bins.tsv",
        "manifest.json",
    ] {
        assert!(ev.join(file).exists(), "missing {file}");
    }
}

#[test]
fn bad_input_exits_one_with_a_single_json_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "user_id,item_id,a\nu1,i1,9\n").unwrap();
    let out = run(&["fit", "--input", "bad.csv", "--output", "m.bin"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "RatingOutOfRange");

    let out = run(&["fit", "--input", "missing.csv", "--output", "m.bin"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "Io");

    let out = run(&["fit", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "Usage");

    let out = run(&["predict", "--archive", "bad.csv", "--input", "bad.csv", "--output", "p"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "Archive");
}

#[test]
fn diagnose_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["diagnose", "--pg-draws", "5000", "--geweke-iters", "200"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("check\tname\tstatistic\tvalue\tpass\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("pg_mean")).count(), 4);
    assert!(text.lines().any(|l| l.starts_with("geweke\tz[0,0]")));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let mut args = FIT.to_vec();
    args.extend(["--output", "one.bin"]);
    let out = bin().args(&args).env("ASPECT_BIAS_THREADS", "1").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
    let mut args = FIT.to_vec();
    args.extend(["--output", "many.bin"]);
    let out = bin().args(&args).env("ASPECT_BIAS_THREADS", "4").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("one.bin")).unwrap(),
        std::fs::read(dir.path().join("many.bin")).unwrap()
    );
}
