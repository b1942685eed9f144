//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs the desk-scale pipeline on the default synthetic corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};

use knobs::api;
use knobs::commands::{self, MapConfig, SteerConfig, SweepConfig, SweepSteerConfig, SynthConfig, TrainCfaeConfig, TrainSaeConfig};
use knobs::config::{parse_args, resolve};
use knobs::snapshot::{Snapshot, SnapshotPaths};
use knobs_core::concept_map::{self, ConceptNeuronMap, MappingKind, Side};
use knobs_core::corpus::HoldoutPair;
use knobs_core::elsa;
use knobs_core::eval::{self, SweepCell};
use knobs_core::gradcheck;
use knobs_core::metrics::{ndcg_at_n, recall_at_n};
use knobs_core::multvae;
use knobs_core::nested::Cfae;
use knobs_core::pipeline::{self, Prepared, SplitConfig};
use knobs_core::rng;
use knobs_core::sae::{self, LossKind, SaeModel, SaeParams, SaeVariant, Standardizer};
use knobs_core::steering::{self, SteeringDirective, DEFAULT_ALPHAS};
use knobs_core::synthetic::{self, SyntheticCorpus, SyntheticSpec};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, name: &'static str, started: Instant, passed: bool, detail: String) {
    let line = format!("{} [{:>6.1}s] {name}: {detail}", if passed { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    println!("{line}");
    results.push(Outcome { name, passed, detail });
}

fn info(detail: String) {
    println!("INFO {detail}");
}

// ------------------------------------------------------------------ fixture

struct Desk {
    corpus: SyntheticCorpus,
    prepared: Prepared,
    elsa: Cfae,
    base_recall: f64,
}

fn desk() -> Desk {
    let corpus = synthetic::generate(&SyntheticSpec::default()).unwrap();
    let prepared = pipeline::prepare(&corpus.interactions, &SplitConfig::default()).unwrap();
    let elsa = Cfae::Elsa(elsa::train(&prepared.train, &prepared.val, 64, &pipeline::desk_elsa_config(0)).unwrap());
    let base_recall = eval::evaluate_ranking(&elsa, None, &prepared.test_holdouts, 20).unwrap().recall.mean;
    Desk {
        corpus,
        prepared,
        elsa,
        base_recall,
    }
}

fn fit_sae(cfae: &Cfae, p: &Prepared, variant: SaeVariant, loss: LossKind) -> SaeModel {
    let train = pipeline::user_embeddings(cfae, &p.train);
    let val = pipeline::user_embeddings(cfae, &p.val);
    let cfg = sae::SaeConfig {
        variant,
        loss,
        ..pipeline::desk_sae_config(0)
    };
    sae::train(train.view(), Some(val.view()), &cfg).unwrap()
}

fn nested_recall(cfae: &Cfae, s: &SaeModel, holdouts: &BTreeMap<u32, HoldoutPair>) -> f64 {
    eval::evaluate_ranking(cfae, Some(s), holdouts, 20).unwrap().recall.mean
}

// ------------------------------------------------------------------ criteria

fn gradients(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let checks = gradcheck::all();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let ok = failed.is_empty() && t.elapsed() < Duration::from_secs(30);
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    report(
        results,
        "gradient suite",
        t,
        ok,
        format!("{} checks ({}), max rel err {worst:.2e} <= 1e-4, failed {failed:?}", checks.len(), names.join(", ")),
    );
}

fn sparsity(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut r = rng::seeded(99);
    let (mut over_k, mut nonpositive, mut worst_round_trip) = (0usize, 0usize, 0.0f64);
    let mut encodes = 0usize;
    for model_ix in 0..100u64 {
        let p = 8;
        let d = 32;
        let mut params = SaeParams::random(p, d, model_ix);
        params.b_enc.mapv_inplace(|_| rng::uniform(&mut r, -0.5, 0.5));
        let fit = Array2::from_shape_fn((16, p), |_| 3.0 * rng::normal(&mut r) + 1.0);
        let std = Standardizer::fit(fit.view());
        let k = 1 + rng::below(&mut r, 12) as usize;
        let topk = SaeModel::new(params.clone(), SaeVariant::TopK { k }, LossKind::L2, 0.0, std.clone()).unwrap();
        let basic = SaeModel::new(params, SaeVariant::Basic, LossKind::L2, 0.0, std.clone()).unwrap();
        for _ in 0..50 {
            let y = Array1::from_shape_fn(p, |_| 10.0 * rng::normal(&mut r));
            let c = topk.encode(y.view());
            over_k += usize::from(c.l0() > k);
            nonpositive += c.entries().iter().filter(|e| !(e.1 > 0.0)).count();
            let c = basic.encode(y.view());
            nonpositive += c.entries().iter().filter(|e| !(e.1 > 0.0)).count();
            encodes += 2;
            let back = std.destandardize(std.standardize(y.view()).view());
            let err = (&back - &y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst_round_trip = worst_round_trip.max(err);
        }
    }
    let ok = over_k == 0 && nonpositive == 0 && worst_round_trip <= 1e-10;
    report(
        results,
        "sparsity invariants",
        t,
        ok,
        format!("{encodes} encodes: {over_k} codes over k, {nonpositive} non-positive activations, round trip max err {worst_round_trip:.1e} <= 1e-10"),
    );
}

fn brute_force(ranked: &[u32], targets: &[u32], n: usize) -> (f64, f64) {
    let targets: HashSet<u32> = targets.iter().copied().collect();
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(n).enumerate() {
        if targets.contains(item) {
            hits += 1.0;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal = n.min(targets.len());
    let mut idcg = 0.0;
    for pos in 0..ideal {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    (hits / ideal as f64, dcg / idcg)
}

fn metric_oracle(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut r = rng::seeded(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let items = 1 + rng::below(&mut r, 50) as u32;
        let mut ranked: Vec<u32> = (0..items).collect();
        rng::shuffle(&mut r, &mut ranked);
        let mut pool: Vec<u32> = (0..items).collect();
        rng::shuffle(&mut r, &mut pool);
        let targets = &pool[..1 + rng::below(&mut r, 10.min(items as u64)) as usize];
        let n = 1 + rng::below(&mut r, 50) as usize;
        let (rec, nd) = brute_force(&ranked, targets, n);
        if recall_at_n(&ranked, targets, n) != Some(rec) || ndcg_at_n(&ranked, targets, n) != Some(nd) {
            mismatches += 1;
        }
    }
    report(results, "metric oracle equivalence", t, mismatches == 0, format!("1000 instances, {mismatches} inexact"));
}

fn reconstruction(results: &mut Vec<Outcome>, desk: &Desk) {
    let t = Instant::now();
    let p = &desk.prepared;
    let train = pipeline::user_embeddings(&desk.elsa, &p.train);
    let val = pipeline::user_embeddings(&desk.elsa, &p.val);
    let grid: Vec<SweepCell> = [8, 16, 32, 64]
        .into_iter()
        .map(|k| SweepCell {
            variant: SaeVariant::TopK { k },
            width_ratio: 8,
            loss: LossKind::L2,
            lambda1: pipeline::desk_sae_config(0).lambda1,
        })
        .collect();
    let rows = eval::sparsity_accuracy_sweep(
        &desk.elsa,
        train.view(),
        Some(val.view()),
        &p.test_holdouts,
        &pipeline::desk_sae_config(0),
        &grid,
        20,
    )
    .unwrap();
    let pct: Vec<f64> = rows.iter().map(|r| r.recovered_recall_pct).collect();
    let inv = eval::inversions(&pct);
    let ok = rows.iter().all(|r| r.ok()) && pct[1] >= 90.0 && inv <= 1 && t.elapsed() < Duration::from_secs(600);
    report(
        results,
        "reconstruction fidelity",
        t,
        ok,
        format!(
            "base Recall@20 {:.4}; recovered % at k=8/16/32/64: {:.1}/{:.1}/{:.1}/{:.1} (k=16 >= 90), {inv} inversion(s) <= 1",
            desk.base_recall, pct[0], pct[1], pct[2], pct[3]
        ),
    );
}

fn cosine_ablation(results: &mut Vec<Outcome>, desk: &Desk) {
    let t = Instant::now();
    let p = &desk.prepared;
    let topk = SaeVariant::TopK { k: 16 };
    let elsa_l2 = nested_recall(&desk.elsa, &fit_sae(&desk.elsa, p, topk, LossKind::L2), &p.test_holdouts);
    let elsa_cos = nested_recall(&desk.elsa, &fit_sae(&desk.elsa, p, topk, LossKind::Cosine), &p.test_holdouts);
    let vae = Cfae::MultVae(multvae::train(&p.train, &p.val, 64, &pipeline::desk_multvae_config(0)).unwrap());
    let vae_base = eval::evaluate_ranking(&vae, None, &p.test_holdouts, 20).unwrap().recall.mean;
    let vae_l2 = nested_recall(&vae, &fit_sae(&vae, p, topk, LossKind::L2), &p.test_holdouts);
    let vae_cos = nested_recall(&vae, &fit_sae(&vae, p, topk, LossKind::Cosine), &p.test_holdouts);
    let ok = elsa_cos >= elsa_l2 - 0.02 && vae_cos < vae_l2;
    report(
        results,
        "cosine-loss ablation",
        t,
        ok,
        format!(
            "ELSA Recall@20 cosine {elsa_cos:.4} >= L2 {elsa_l2:.4} - 0.02; MultVAE (base {vae_base:.4}) cosine {vae_cos:.4} < L2 {vae_l2:.4}"
        ),
    );
}

struct Mapped {
    sae: SaeModel,
    map: ConceptNeuronMap,
}

fn concept_recovery(results: &mut Vec<Outcome>, desk: &Desk) -> Mapped {
    let t = Instant::now();
    let sae = fit_sae(&desk.elsa, &desk.prepared, SaeVariant::TopK { k: 16 }, LossKind::L2);
    let codes = concept_map::item_codes(&desk.elsa, &sae);
    let map = ConceptNeuronMap::build(&desk.corpus.tags, &codes, sae.width());
    let concept_items: Vec<Vec<u32>> = (0..desk.corpus.concept_names.len() as u32)
        .map(|g| desk.corpus.concept_items(g))
        .collect();
    let rec = eval::concept_recovery_score(&map, &codes, &desk.corpus.concept_names, &concept_items);
    let ok = rec.score >= 0.8 && rec.distinct_neurons >= 12;
    report(
        results,
        "concept recovery",
        t,
        ok,
        format!("score {:.3} >= 0.8, {} distinct representative neurons >= 12", rec.score, rec.distinct_neurons),
    );
    Mapped { sae, map }
}

fn steering_criterion(results: &mut Vec<Outcome>, desk: &Desk, m: &Mapped) {
    let t = Instant::now();
    let p = &desk.prepared;
    let tags = &desk.corpus.tags;
    let mut identical = 0;
    for pair in p.test_holdouts.values() {
        let neuron = steering::select_salient_segment(pair, tags)
            .ok()
            .and_then(|s| m.map.neuron_for_tag(s.tag, MappingKind::Representative))
            .unwrap_or(0);
        let d = SteeringDirective::single(neuron, 0.0).unwrap();
        let steered = steering::recommend(&desk.elsa, Some(&m.sae), &pair.input_items, Some(&d), 20, true).unwrap();
        let plain = steering::recommend(&desk.elsa, Some(&m.sae), &pair.input_items, None, 20, true).unwrap();
        identical += usize::from(steered == plain);
    }
    let users = p.test_holdouts.len();
    let sweep = |kind| {
        steering::steering_sweep(&desk.elsa, &m.sae, &m.map, tags, &p.test_holdouts, &DEFAULT_ALPHAS, kind, 20).unwrap()
    };
    let rep = sweep(MappingKind::Representative);
    let uni = sweep(MappingKind::Unique);
    let at = |rows: &[steering::SweepRow], a: f64| rows.iter().find(|r| r.alpha == a).unwrap().clone();
    let (r0, r2) = (at(&rep, 0.0), at(&rep, 0.2));
    let lift = r2.segment_precision_at_20 / r0.segment_precision_at_20;
    let kept = r2.recall_at_20 / r0.recall_at_20;
    let dominated: Vec<f64> = rep
        .iter()
        .zip(&uni)
        .filter(|(a, b)| a.segment_precision_at_20 < b.segment_precision_at_20)
        .map(|(a, _)| a.alpha)
        .collect();
    let ok = identical == users && lift >= 2.0 && kept >= 0.7 && dominated.is_empty();
    report(
        results,
        "steering identity and efficacy",
        t,
        ok,
        format!(
            "alpha=0 identical for {identical}/{users} users; alpha=0.2 precision {:.3} -> {:.3} (x{lift:.2} >= 2), recall {:.4} vs {:.4} ({:.0}% >= 70%); representative < unique at alphas {dominated:?}",
            r0.segment_precision_at_20,
            r2.segment_precision_at_20,
            r2.recall_at_20,
            r0.recall_at_20,
            kept * 100.0
        ),
    );
    let curve = |rows: &[steering::SweepRow]| {
        rows.iter()
            .map(|r| format!("{:.3}", r.segment_precision_at_20))
            .collect::<Vec<_>>()
            .join("/")
    };
    let precisions: Vec<f64> = rep.iter().map(|r| r.segment_precision_at_20).collect();
    info(format!(
        "segment precision over alphas {DEFAULT_ALPHAS:?}: representative {}, unique {}; representative inversions {}",
        curve(&rep),
        curve(&uni),
        eval::inversions(&precisions)
    ));

    // Per-concept boosting: concept-g items in the top-20 should rise for most users.
    let mut increased = 0;
    let mut total = 0;
    for (g, name) in desk.corpus.concept_names.iter().enumerate() {
        let Some(neuron) = m.map.tag_index(name).and_then(|t| m.map.neuron_for_tag(t, MappingKind::Representative)) else {
            continue;
        };
        let items: HashSet<u32> = desk.corpus.concept_items(g as u32).into_iter().collect();
        let d = SteeringDirective::single(neuron, 0.2).unwrap();
        for pair in p.test_holdouts.values() {
            let count = |list: Vec<(u32, f64)>| list.iter().filter(|e| items.contains(&e.0)).count();
            let base = count(steering::recommend(&desk.elsa, Some(&m.sae), &pair.input_items, None, 20, true).unwrap());
            let boosted = count(steering::recommend(&desk.elsa, Some(&m.sae), &pair.input_items, Some(&d), 20, true).unwrap());
            increased += usize::from(boosted > base);
            total += 1;
        }
    }
    info(format!(
        "concept boost at alpha=0.2 raises that concept's top-20 count for {increased}/{total} user-concept pairs ({:.1}%, gate 90%)",
        100.0 * increased as f64 / total as f64
    ));
}

fn selectivity_math(results: &mut Vec<Outcome>, m: &Mapped) {
    let t = Instant::now();
    let uniform = concept_map::smooth_distribution(Array1::from_elem(8192, 1.0).view()).unwrap();
    let h = concept_map::entropy_bits(uniform.view());
    let sel = concept_map::selectivity(&m.map);
    let map_min_kl = sel
        .tags
        .rows
        .iter()
        .chain(&sel.neurons.rows)
        .map(|r| r.kl_bits)
        .fold(f64::INFINITY, f64::min);

    let mut r = rng::seeded(5);
    let mut random_min_kl = f64::INFINITY;
    let mut average_row_kl = 0.0f64;
    for trial in 0..50 {
        let (rows, cols) = (6, 64 + trial);
        let mut m = Array2::from_shape_fn((rows + 1, cols), |_| {
            let v = rng::unit(&mut r);
            if v < 0.3 { 0.0 } else { v }
        });
        for mut row in m.outer_iter_mut().take(rows) {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let avg = m.slice(ndarray::s![..rows, ..]).mean_axis(ndarray::Axis(0)).unwrap();
        m.row_mut(rows).assign(&avg);
        let keys: Vec<String> = (0..=rows).map(|i| i.to_string()).collect();
        let stats = concept_map::row_selectivity(m.view(), &keys, Side::Tag);
        random_min_kl = stats.rows.iter().map(|r| r.kl_bits).fold(random_min_kl, f64::min);
        average_row_kl = average_row_kl.max(stats.rows[rows].kl_bits.abs());
    }
    let ok = (h - 13.0).abs() <= 1e-9 && map_min_kl >= 0.0 && random_min_kl >= 0.0 && average_row_kl <= 1e-6;
    report(
        results,
        "selectivity math",
        t,
        ok,
        format!(
            "uniform 8192 H = {h:.12} bits; min D_KL {map_min_kl:.3e} (map) / {random_min_kl:.3e} (random) >= 0; average row D_KL {average_row_kl:.1e} <= 1e-6"
        ),
    );
}

// ------------------------------------------------------------------ determinism

fn cfg<T: serde::de::DeserializeOwned>(cmd: &str, flags: &[(&str, &str)]) -> T {
    let mut argv = vec![cmd.to_owned()];
    for (k, v) in flags {
        argv.push(format!("--{k}"));
        argv.push((*v).to_owned());
    }
    resolve(&parse_args(&argv).unwrap()).unwrap()
}

/// Full CLI pipeline with relative paths; returns the `/recommend` and
/// `/encode` bodies for a few requests against the resulting snapshot.
fn run_pipeline() -> Vec<String> {
    commands::synth(&cfg::<SynthConfig>("synth", &[("out", "corpus")])).unwrap();
    commands::train_cfae(&cfg::<TrainCfaeConfig>("train-cfae", &[("corpus", "corpus"), ("out", "cfae")])).unwrap();
    let c = [("corpus", "corpus"), ("cfae", "cfae/cfae.knob")];
    commands::train_sae(&cfg::<TrainSaeConfig>("train-sae", &[c[0], c[1], ("out", "sae")])).unwrap();
    let s = ("sae", "sae/sae.knob");
    commands::eval_cmd(&cfg("eval", &[c[0], c[1], s, ("out", "eval")])).unwrap();
    commands::sweep(&cfg::<SweepConfig>("sweep", &[c[0], c[1], ("out", "sweep"), ("ks", "[8, 16]")])).unwrap();
    commands::map(&cfg::<MapConfig>("map", &[c[0], c[1], s, ("out", "map")])).unwrap();
    let m = ("map", "map/concept_map.json");
    commands::steer(&cfg::<SteerConfig>("steer", &[c[0], c[1], s, m, ("out", "steer"), ("alpha", "0.15"), ("tag", "love story")]))
        .unwrap();
    commands::sweep_steer(&cfg::<SweepSteerConfig>("sweep-steer", &[c[0], c[1], s, m, ("out", "sweep-steer")])).unwrap();

    let snap = Snapshot::load(&SnapshotPaths {
        cfae: "cfae/cfae.knob".into(),
        sae: "sae/sae.knob".into(),
        map: "map/concept_map.json".into(),
        corpus: Some("corpus".into()),
    })
    .unwrap();
    let mut bodies = vec![api::health(&snap).unwrap(), api::knobs(&snap, None).unwrap()];
    for (i, tag) in ["children", "horror", "western"].iter().enumerate() {
        let req = serde_json::json!({
            "history": [i, i + 30, i + 200],
            "boosts": [{"tag": tag, "weight": 1.0}],
            "alpha": 0.2,
            "include_baseline": true
        });
        bodies.push(api::recommend(&snap, req.to_string().as_bytes()).unwrap());
        bodies.push(api::encode(&snap, serde_json::json!({"history": [i, i + 1]}).to_string().as_bytes()).unwrap());
    }
    bodies
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_owned(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let home = std::env::current_dir().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir_all(&dir).unwrap();
        std::env::set_current_dir(&dir).unwrap();
        let bodies = run_pipeline();
        std::env::set_current_dir(&home).unwrap();
        runs.push((files(&dir), bodies));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<String> = a
        .0
        .iter()
        .filter(|(k, v)| b.0.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_set = a.0.keys().eq(b.0.keys());
    let api_same = a.1 == b.1;
    let ok = same_set && differing.is_empty() && api_same;
    report(
        results,
        "determinism",
        t,
        ok,
        format!(
            "{} artifacts over 8 stages, {} differ {differing:?}; {} API responses identical: {api_same}",
            a.0.len(),
            differing.len(),
            a.1.len()
        ),
    );
}

fn main() {
    let started = Instant::now();
    let mut results = Vec::new();
    gradients(&mut results);
    sparsity(&mut results);
    metric_oracle(&mut results);
    let t = Instant::now();
    let desk = desk();
    info(format!(
        "desk ELSA r=64 trained in {:.1}s, test Recall@20 {:.4}",
        t.elapsed().as_secs_f64(),
        desk.base_recall
    ));
    reconstruction(&mut results, &desk);
    cosine_ablation(&mut results, &desk);
    let mapped = concept_recovery(&mut results, &desk);
    steering_criterion(&mut results, &desk, &mapped);
    selectivity_math(&mut results, &mapped);
    determinism(&mut results);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for r in results.iter().filter(|r| !r.passed) {
            eprintln!("failed: {} ({})", r.name, r.detail);
        }
        std::process::exit(1);
    }
}
