use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str =
    "context_length = 64\nhorizon_length = 16\nstride = 16\nvocab = 128\nn_series = 24\nn_samples = 4\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavetoken"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    eprintln!(
        "$ wavetoken {}\n{}{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(0), "wavetoken {args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

/// A temp dir holding `small.toml` and a synthetic corpus `d.jsonl`.
fn workspace(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), format!("{SMALL}{extra}")).unwrap();
    ok(dir.path(), &["--config", "small.toml", "synth", "--out", "d.jsonl"]);
    dir
}

fn report_value(text: &str, label: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(label))
        .unwrap_or_else(|| panic!("no '{label}' in {text}"));
    line.split('=')
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn full_pipeline_produces_h_step_forecasts() {
    let w = workspace("");
    let d = w.path();
    let c = ["--config", "small.toml"];
    ok(
        d,
        &[&c[..], &["fit-codebook", "--data", "d.jsonl", "--out", "cb.json"]].concat(),
    );
    ok(
        d,
        &[
            &c[..],
            &["train", "--data", "d.jsonl", "--codebook", "cb.json", "--out", "m.json"],
        ]
        .concat(),
    );
    ok(
        d,
        &[
            &c[..],
            &[
                "forecast",
                "--holdout",
                "--data",
                "d.jsonl",
                "--codebook",
                "cb.json",
                "--model",
                "m.json",
                "--out",
                "f.jsonl",
            ],
        ]
        .concat(),
    );
    let text = std::fs::read_to_string(d.join("f.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 24);
    for r in &records {
        let samples = r["samples"].as_array().unwrap();
        assert_eq!(samples.len(), 4);
        assert!(samples.iter().all(|s| s.as_array().unwrap().len() == 16));
        assert!(!r["run_fingerprint"].as_str().unwrap().is_empty());
    }
    ok(
        d,
        &[
            &c[..],
            &["eval", "--data", "d.jsonl", "--forecasts", "f.jsonl", "--out", "r.csv"],
        ]
        .concat(),
    );
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let fp = ok(d, &[&c[..], &["show-config"]].concat());
    let fp = fp.lines().last().unwrap().split('"').nth(1).unwrap().to_string();
    assert!(report.lines().skip(1).all(|l| l.ends_with(&fp)));
    // the baseline relative to itself
    assert!(report
        .lines()
        .any(|l| l == format!("_relative,seasonal_naive,wql,1.0,{fp}")));
}

#[test]
fn default_codebook_fits_budget_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--n-series", "30", "synth", "--out", "d.jsonl"]);
    let text = ok(
        d,
        &[
            "--n-series",
            "30",
            "fit-codebook",
            "--data",
            "d.jsonl",
            "--out",
            "a.json",
        ],
    );
    assert!(report_value(&text, "vocabulary") <= 1024.0);
    assert!(report_value(&text, "clamp rate") >= 0.0);
    ok(
        d,
        &[
            "--n-series",
            "30",
            "fit-codebook",
            "--data",
            "d.jsonl",
            "--out",
            "b.json",
        ],
    );
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    let cb: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(cb["bounds"], serde_json::json!([-30.0, 30.0]));
}

#[test]
fn tokenize_round_trip_report_and_fingerprint_check() {
    let w = workspace("family = \"haar\"\n");
    let d = w.path();
    let c = ["--config", "small.toml"];
    ok(
        d,
        &[&c[..], &["fit-codebook", "--data", "d.jsonl", "--out", "cb.json"]].concat(),
    );
    let text = ok(
        d,
        &[
            &c[..],
            &[
                "tokenize",
                "--data",
                "d.jsonl",
                "--codebook",
                "cb.json",
                "--out",
                "t.jsonl",
            ],
        ]
        .concat(),
    );
    assert!(report_value(&text, "max RMSE / (h/2)") <= 1.0);
    assert_eq!(report_value(&text, "PAD rate"), 0.0);
    ok(
        d,
        &[
            &c[..],
            &[
                "detokenize",
                "--tokens",
                "t.jsonl",
                "--codebook",
                "cb.json",
                "--out",
                "r.csv",
            ],
        ]
        .concat(),
    );
    assert!(d.join("r.csv.meta.json").exists());

    // a codebook fitted with another budget must be refused
    ok(
        d,
        &[
            &c[..],
            &[
                "--vocab",
                "64",
                "fit-codebook",
                "--data",
                "d.jsonl",
                "--out",
                "cb64.json",
            ],
        ]
        .concat(),
    );
    let text = std::fs::read_to_string(d.join("cb64.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    // same tokenizer fingerprint, different codebook content
    let mut base: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("cb.json")).unwrap()).unwrap();
    v["metadata"] = base["metadata"].take();
    std::fs::write(d.join("other.json"), v.to_string()).unwrap();
    let out = run(
        d,
        &[
            &c[..],
            &[
                "detokenize",
                "--tokens",
                "t.jsonl",
                "--codebook",
                "other.json",
                "--out",
                "x.csv",
            ],
        ]
        .concat(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint mismatch"));

    // and so must a codebook built under different tokenizer settings
    let out = run(
        d,
        &[
            &c[..],
            &[
                "detokenize",
                "--tokens",
                "t.jsonl",
                "--codebook",
                "cb64.json",
                "--out",
                "x.csv",
            ],
        ]
        .concat(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_forecasts_score_zero() {
    let w = workspace("");
    let d = w.path();
    let text = std::fs::read_to_string(d.join("d.jsonl")).unwrap();
    let mut lines = Vec::new();
    for l in text.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let target = v["target"].as_array().unwrap();
        let truth: Vec<f64> = target[target.len() - 16..]
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        let rec = serde_json::json!({"item_id": v["item_id"], "holdout": true, "samples": [truth.clone(), truth]});
        lines.push(rec.to_string());
    }
    std::fs::write(d.join("oracle.jsonl"), lines.join("\n")).unwrap();
    ok(
        d,
        &[
            "--config",
            "small.toml",
            "eval",
            "--data",
            "d.jsonl",
            "--forecasts",
            "oracle.jsonl",
            "--out",
            "r.csv",
        ],
    );
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    for metric in ["wql", "mase", "vrse"] {
        let row = report
            .lines()
            .find(|l| l.starts_with(&format!("d,wavetoken,{metric},")))
            .unwrap();
        assert_eq!(row.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0, "{row}");
    }
}

fn table(path: PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn ablation_grid_resume_and_failures() {
    let w = workspace("order = 2\n");
    let d = w.path();
    std::fs::write(
        d.join("grid.toml"),
        "family = [\"haar\", \"bior2.2\"]\nlevel = [1, 2]\n",
    )
    .unwrap();
    let args = [
        "--config",
        "small.toml",
        "ablate",
        "--grid",
        "grid.toml",
        "--data",
        "d.jsonl",
        "--out",
        "t.csv",
    ];
    let first = ok(d, &args);
    assert!(first.contains("4 computed, 0 reused"), "{first}");
    let t1 = table(d.join("t.csv"));
    assert_eq!(t1.lines().count(), 5);
    assert!(t1.lines().skip(1).all(|l| l.contains(",ok,")));

    let second = ok(d, &args);
    assert!(second.contains("0 computed, 4 reused"), "{second}");
    assert_eq!(table(d.join("t.csv")), t1);

    // an interrupted table (first two rows only) is completed, not redone
    let partial: Vec<&str> = t1.lines().take(3).collect();
    std::fs::write(d.join("t.csv"), partial.join("\n") + "\n").unwrap();
    let third = ok(d, &args);
    assert!(third.contains("2 computed, 2 reused"), "{third}");
    assert_eq!(table(d.join("t.csv")), t1);

    // same grid and seed from scratch: identical table
    std::fs::remove_file(d.join("t.csv")).unwrap();
    ok(d, &args);
    assert_eq!(table(d.join("t.csv")), t1);

    // a cell that cannot run is recorded and the sweep goes on
    std::fs::write(d.join("bad.toml"), "threshold = [\"none\", \"fdrc:1.5\"]\n").unwrap();
    let out = run(
        d,
        &[
            "--config",
            "small.toml",
            "ablate",
            "--grid",
            "bad.toml",
            "--data",
            "d.jsonl",
            "--out",
            "b.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let t = table(d.join("b.csv"));
    assert!(t.lines().nth(1).unwrap().contains(",ok,"));
    assert!(t.lines().nth(2).unwrap().contains(",failed,"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "family = \"haar\"\nlevel = 2\n").unwrap();
    let text = ok(d, &["--config", "c.toml", "--level", "3", "show-config"]);
    assert!(text.contains("family = \"haar\""));
    assert!(text.contains("level = 3"));
    assert!(text.contains("vocab = 1024"));
    let out = run(d, &["--threshold", "bogus", "show-config"]);
    assert_eq!(out.status.code(), Some(2));
}
