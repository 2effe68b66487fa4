use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn oea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oea"))
        .current_dir(fixtures())
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = oea(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    serde_json::from_str(&ok_stdout(args)).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("oea-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Compares against a checked-in file; `OEA_UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("OEA_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "output differs from {name}");
}

#[test]
fn route_simplified_stays_within_expert_count() {
    let doc = ok_json(&[
        "route",
        "--scores",
        "small.ndjson",
        "--mode",
        "simplified",
        "--k",
        "4",
        "--k0",
        "3",
    ]);
    assert_eq!(doc["format"], "oea.plan");
    assert_eq!(doc["version"], 1);
    let plans = doc["plans"].as_array().unwrap();
    assert_eq!(plans.len(), 4);
    for p in plans {
        let t = p["T"].as_u64().unwrap();
        assert!((3..=8).contains(&t));
        for tok in p["tokens"].as_array().unwrap() {
            let w: f64 = tok["weights"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .sum();
            assert!((w - 1.0).abs() < 1e-12);
            assert!(tok["experts"].as_array().unwrap().len() <= 4);
        }
    }
}

#[test]
fn vanilla_single_token_activates_k() {
    let doc = ok_json(&[
        "route",
        "--scores",
        "single_token.ndjson",
        "--mode",
        "vanilla",
        "--k",
        "8",
    ]);
    for p in doc["plans"].as_array().unwrap() {
        assert_eq!(p["T"], 8);
        assert_eq!(p["total_load"], 8);
    }
}

#[test]
fn malformed_scores_exit_two_and_name_the_row() {
    let out = oea(&["route", "--scores", "negative_score.ndjson"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 1"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let out = oea(&["simulate", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_subcommand_fails() {
    assert_ne!(oea(&["frobnicate"]).status.code(), Some(0));
}

#[test]
fn simulate_uniform_vanilla_matches_formula() {
    let dir = scratch("uniform");
    let d = dir.to_str().unwrap();
    ok_stdout(&["simulate", "--seed", "5", "--steps", "400", "--out", d]);
    let doc: Value =
        serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap();
    let mean = doc["summary"]["mean_active_experts"].as_f64().unwrap();
    let ci = doc["mean_active_experts_ci95"].as_array().unwrap();
    let (lo, hi) = (ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap());
    let expected = doc["expected_active_experts_uniform"].as_f64().unwrap();
    assert!((expected - 82.4225).abs() < 1e-3);
    assert!(lo <= mean && mean <= hi);
    assert!(
        lo <= expected && expected <= hi,
        "{expected} outside [{lo}, {hi}]"
    );
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2 + 400);
}

#[test]
fn simplified_with_full_baseline_normalizes_to_one() {
    let dir = scratch("k0eq8");
    let d = dir.to_str().unwrap();
    ok_stdout(&[
        "simulate",
        "--seed",
        "5",
        "--steps",
        "50",
        "--mode",
        "simplified",
        "--k0",
        "8",
        "--out",
        d,
    ]);
    let doc: Value =
        serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(doc["normalized_average"]["active_experts"], 1.0);
    assert_eq!(doc["normalized_average"]["latency"], 1.0);
}

#[test]
fn simulate_is_byte_reproducible() {
    let run = |threads: &str| {
        let dir = scratch(&format!("repro{threads}"));
        let d = dir.to_str().unwrap();
        ok_stdout(&[
            "--threads",
            threads,
            "simulate",
            "--seed",
            "9",
            "--steps",
            "30",
            "--layers",
            "2",
            "--mode",
            "oea",
            "--k0",
            "3",
            "--p",
            "0.8",
            "--kmax",
            "12",
            "--maxp",
            "16",
            "--out",
            d,
        ]);
        (
            std::fs::read(dir.join("summary.json")).unwrap(),
            std::fs::read(dir.join("trace.csv")).unwrap(),
        )
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = scratch("config");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "simplified", "k0": 3, "seed": 4, "steps": 5}"#,
    )
    .unwrap();
    let out = dir.join("out");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    ok_stdout(&["--config", c, "simulate", "--k0", "5", "--out", o]);
    let doc: Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["mode"], "simplified");
    assert_eq!(doc["config"]["k0"], 5);
    assert_eq!(doc["config"]["steps"], 5);

    std::fs::write(&cfg, r#"{"seed": 4, "colour": "red"}"#).unwrap();
    assert_eq!(
        oea(&["--config", c, "simulate", "--out", o]).status.code(),
        Some(2)
    );
}

#[test]
fn pareto_drops_dominated_point() {
    let text = ok_stdout(&["pareto", "--input", "pareto3.csv"]);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(",10.0,") && rows[1].contains(",20.0,"));
}

#[test]
fn fit_recovers_noiseless_line() {
    let doc = ok_json(&["fit-latency", "--input", "line.csv"]);
    let fit = &doc["fit"];
    assert!((fit["slope"].as_f64().unwrap() - 2.5).abs() < 1e-9);
    assert!((fit["intercept"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((fit["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn masked_padding_has_no_overhead() {
    let doc = ok_json(&[
        "padding", "--seed", "2", "--batch", "7", "--pad-to", "8", "--masked", "--steps", "60",
    ]);
    assert_eq!(doc["selected_variant"], "masked");
    assert_eq!(doc["delta_active_experts_vs_no_padding"], 0.0);
    assert_eq!(doc["delta_latency_us_vs_no_padding"], 0.0);
    let naive = ok_json(&[
        "padding", "--seed", "2", "--batch", "7", "--pad-to", "8", "--steps", "60",
    ]);
    assert!(
        naive["delta_active_experts_vs_no_padding"]
            .as_f64()
            .unwrap()
            > 0.0
    );
}

#[test]
fn padding_below_batch_is_rejected() {
    let out = oea(&["padding", "--seed", "2", "--batch", "8", "--pad-to", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_layer_roundtrip_through_simulate() {
    let dir = scratch("toy");
    let layer = dir.join("layer.json");
    let l = layer.to_str().unwrap();
    ok_stdout(&[
        "init-layer",
        "--seed",
        "1",
        "--n-experts",
        "8",
        "--d-model",
        "8",
        "--d-hidden",
        "12",
        "--out",
        l,
    ]);
    let out = dir.join("sim");
    ok_stdout(&[
        "simulate",
        "--seed",
        "1",
        "--n-experts",
        "8",
        "--k",
        "2",
        "--batch",
        "4",
        "--steps",
        "5",
        "--mode",
        "simplified",
        "--k0",
        "1",
        "--toy-layer",
        l,
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(doc["quality_metric"], "toy_layer_relative_output_error");
    assert!(doc["summary"]["mean_divergence"].as_f64().unwrap() > 0.0);

    // layer width disagreeing with the routed expert count is an error
    let bad = oea(&[
        "simulate",
        "--seed",
        "1",
        "--n-experts",
        "16",
        "--toy-layer",
        l,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn golden_plan() {
    golden(
        "plan.json",
        &ok_stdout(&[
            "route",
            "--scores",
            "small.ndjson",
            "--mode",
            "oea",
            "--k",
            "4",
            "--k0",
            "2",
            "--p",
            "0.7",
            "--kmax",
            "5",
            "--maxp",
            "6",
        ]),
    );
}

#[test]
fn golden_simulate() {
    let dir = scratch("golden-sim");
    ok_stdout(&[
        "simulate",
        "--seed",
        "21",
        "--n-experts",
        "16",
        "--k",
        "4",
        "--batch",
        "4",
        "--steps",
        "4",
        "--mode",
        "simplified",
        "--k0",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    golden(
        "summary.json",
        &std::fs::read_to_string(dir.join("summary.json")).unwrap(),
    );
    golden(
        "trace.csv",
        &std::fs::read_to_string(dir.join("trace.csv")).unwrap(),
    );
}

#[test]
fn golden_sweep() {
    let dir = scratch("golden-sweep");
    ok_stdout(&[
        "sweep",
        "--seed",
        "21",
        "--n-experts",
        "8",
        "--k",
        "2",
        "--batch",
        "4",
        "--steps",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    golden(
        "sweep.csv",
        &std::fs::read_to_string(dir.join("sweep.csv")).unwrap(),
    );
    golden(
        "frontier.csv",
        &std::fs::read_to_string(dir.join("frontier.csv")).unwrap(),
    );
}

#[test]
fn golden_padding_and_fit() {
    golden(
        "padding.json",
        &ok_stdout(&[
            "padding",
            "--seed",
            "3",
            "--n-experts",
            "16",
            "--k",
            "2",
            "--batch",
            "3",
            "--pad-to",
            "4",
            "--steps",
            "3",
        ]),
    );
    golden(
        "fit.json",
        &ok_stdout(&["fit-latency", "--input", "line.csv"]),
    );
}

#[test]
fn golden_gen_scores() {
    golden(
        "scores.ndjson",
        &ok_stdout(&[
            "gen-scores",
            "--seed",
            "8",
            "--n-experts",
            "4",
            "--batch",
            "2",
            "--steps",
            "2",
            "--gen",
            "clustered",
            "--groups",
            "2",
        ]),
    );
}
