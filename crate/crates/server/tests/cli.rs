use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use knobs::error::{EXIT_DIMENSION, EXIT_INVALID_INPUT, EXIT_MISSING_INPUT, EXIT_USAGE};

fn knobs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knobs"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = knobs(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error(out: &Output) -> Value {
    serde_json::from_slice::<Value>(out.stderr.trim_ascii()).unwrap()["error"].clone()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: [&str; 4] = ["--num-users", "200", "--interactions-per-user", "20"];

fn small_synth(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args, dir);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), "a", &["--seed", "7"]);
    fs::rename(dir.path().join("a"), dir.path().join("b")).unwrap();
    small_synth(dir.path(), "a", &["--seed", "7"]);
    small_synth(dir.path(), "c", &["--seed", "8"]);
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7);
    let mut differs = false;
    for name in names {
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
        differs |= a != fs::read(dir.path().join("c").join(&name)).unwrap_or_default();
    }
    assert!(differs);
    let m = json(&dir.path().join("a/manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["outputs"]["interactions.tsv"].is_string());
    let elsewhere = json(&dir.path().join("c/manifest.json"));
    assert_ne!(m["config_hash"], elsewhere["config_hash"]);
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), "num_users = 100\ninteractions_per_user = 10\nseed = 3\n").unwrap();
    ok(&["synth", "--config", "s.toml", "--seed", "4", "--out", "s"], dir.path());
    let m = json(&dir.path().join("s/manifest.json"));
    assert_eq!(m["config"]["num_users"], 100);
    assert_eq!(m["config"]["seed"], 4);
}

#[test]
fn failures_have_distinct_exit_codes_and_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = knobs(&["synth", "--no-such-flag", "1"], d);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert_eq!(error(&out)["code"], "unknown_flag");

    let out = knobs(&["frobnicate"], d);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));

    let out = knobs(&["eval", "--corpus", "missing", "--cfae", "missing.knob"], d);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_INPUT));
    assert_eq!(error(&out)["code"], "missing_input");

    small_synth(d, "big", &[]);
    small_synth(d, "small", &["--items-per-concept", "10"]);
    ok(&["train-cfae", "--corpus", "big", "--out", "m", "--dim", "8", "--epochs", "1"], d);
    let out = knobs(&["train-sae", "--corpus", "small", "--cfae", "m/cfae.knob", "--out", "s"], d);
    assert_eq!(out.status.code(), Some(EXIT_DIMENSION));
    assert_eq!(error(&out)["code"], "dimension_mismatch");

    fs::write(d.join("junk.knob"), b"KNOB garbage").unwrap();
    let out = knobs(&["train-sae", "--corpus", "big", "--cfae", "junk.knob", "--out", "s"], d);
    assert_eq!(out.status.code(), Some(EXIT_INVALID_INPUT));

    let out = knobs(&["train-cfae", "--corpus", "big", "--out", "m2", "--model", "transformer"], d);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn width_ratio_scales_a_1024_dim_embedding_to_8192_neurons() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d, "c", &[]);
    ok(&["train-cfae", "--corpus", "c", "--out", "m", "--dim", "1024", "--epochs", "1"], d);
    ok(
        &[
            "train-sae", "--corpus", "c", "--cfae", "m/cfae.knob", "--out", "s", "--variant", "topk", "--k", "16",
            "--width-ratio", "8", "--epochs", "1",
        ],
        d,
    );
    let side = json(&d.join("s/sae.json"));
    assert_eq!(side["p"], 1024);
    assert_eq!(side["d"], 8192);
    assert_eq!(side["k"], 16);
    assert_eq!(side["parent_model"], "elsa");
}

#[test]
fn pipeline_runs_end_to_end_and_steer_alpha_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d, "c", &[]);
    ok(&["train-cfae", "--corpus", "c", "--out", "m", "--dim", "16", "--epochs", "5"], d);
    ok(&["train-sae", "--corpus", "c", "--cfae", "m/cfae.knob", "--out", "s", "--k", "4", "--epochs", "5"], d);
    ok(&["map", "--corpus", "c", "--cfae", "m/cfae.knob", "--sae", "s/sae.knob", "--out", "map"], d);
    for f in ["concept_map.json", "selectivity.csv", "overlap.json", "recovery.json", "manifest.json"] {
        assert!(d.join("map").join(f).exists(), "{f}");
    }
    let out = ok(&["eval", "--corpus", "c", "--cfae", "m/cfae.knob", "--sae", "s/sae.knob", "--out", "e"], d);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n"], 20);
    assert!(d.join("e/metrics.csv").exists());
    let steer = [
        "steer", "--corpus", "c", "--cfae", "m/cfae.knob", "--sae", "s/sae.knob", "--map", "map/concept_map.json",
        "--alpha", "0.15", "--tag", "love story", "--out", "st",
    ];
    let out = ok(&steer, d);
    let body: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["items"].as_array().unwrap().len(), 20);
    let m = json(&d.join("st/manifest.json"));
    assert_eq!(m["config"]["alpha"], 0.15);
    assert_eq!(m["config"]["tag"], "love story");
    for input in ["corpus", "cfae", "sae", "map"] {
        assert_eq!(m["inputs"][input]["sha256"].as_str().unwrap().len(), 64);
    }
    let again = ok(&steer, d);
    assert_eq!(out.stdout, again.stdout);
    ok(
        &[
            "sweep-steer", "--corpus", "c", "--cfae", "m/cfae.knob", "--sae", "s/sae.knob", "--map",
            "map/concept_map.json", "--out", "ss", "--alphas", "[0.0, 0.2]",
        ],
        d,
    );
    let csv = fs::read_to_string(d.join("ss/steering_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    ok(
        &[
            "sweep", "--corpus", "c", "--cfae", "m/cfae.knob", "--out", "sw", "--ks", "[2, 4]", "--basic-lambdas",
            "[0.1]",
        ],
        d,
    );
    let csv = fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(d.join("sw/sweep_plot.json").exists());
}

#[test]
fn ingest_builds_a_corpus_from_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ratings = String::from("user_id\titem_id\tvalue\n");
    let mut tags = String::from("item_id\ttag\n");
    let mut catalog = String::from("item_id\ttitle\n");
    for u in 0..30 {
        for i in 0..12 {
            let v = if (u + i) % 3 == 0 { 2.0 } else { 4.5 };
            ratings.push_str(&format!("u{u}\tm{i}\t{v}\n"));
        }
    }
    for i in 0..12 {
        tags.push_str(&format!("m{i}\t{}\n", if i % 2 == 0 { " Even " } else { "odd" }));
        catalog.push_str(&format!("m{i}\tMovie {i}\n"));
    }
    fs::write(d.join("r.tsv"), ratings).unwrap();
    fs::write(d.join("t.tsv"), tags).unwrap();
    fs::write(d.join("c.tsv"), catalog).unwrap();
    ok(
        &[
            "ingest", "--ratings", "r.tsv", "--tags", "t.tsv", "--catalog", "c.tsv", "--out", "corpus", "--tag-min-count",
            "1",
        ],
        d,
    );
    let corpus = knobs::artifacts::load_corpus(&d.join("corpus")).unwrap();
    assert_eq!(corpus.x.num_users(), 30);
    assert_eq!(corpus.x.nnz(), 30 * 8);
    assert_eq!(corpus.tags.unwrap().tags(), ["even", "odd"]);
    assert_eq!(corpus.titles[0], "Movie 1");
    let out = knobs(&["ingest", "--ratings", "r.tsv", "--tags", "t.tsv", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(EXIT_INVALID_INPUT));
    assert_eq!(error(&out)["code"], "empty_input");
}
