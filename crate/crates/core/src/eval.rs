//! Ranking and reconstruction evaluation, SAE sweeps and concept recovery.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::concept_map::{ConceptNeuronMap, MappingKind};
use crate::corpus::HoldoutPair;
use crate::error::Result;
use crate::metrics::{ndcg_at_n, recall_at_n, top_n, Estimate, Summary};
use crate::nested::{self, Cfae};
use crate::report::fmt_real;
use crate::sae::{self, LossKind, SaeConfig, SaeModel, SaeVariant, SparseCode};

pub const RECALL_DENOMINATOR: &str = "min(n, |targets|)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub recall: Estimate,
    pub ndcg: Estimate,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

fn ranking_from<F>(holdouts: &BTreeMap<u32, HoldoutPair>, n: usize, mut rank: F) -> Result<RankingEval>
where
    F: FnMut(&HoldoutPair) -> Result<Vec<u32>>,
{
    let mut recall = Summary::default();
    let mut ndcg = Summary::default();
    let mut skipped = 0;
    for pair in holdouts.values() {
        if pair.target_items.is_empty() {
            skipped += 1;
            continue;
        }
        let ranked = rank(pair)?;
        if let (Some(r), Some(g)) = (
            recall_at_n(&ranked, &pair.target_items, n),
            ndcg_at_n(&ranked, &pair.target_items, n),
        ) {
            recall.push(r);
            ndcg.push(g);
        }
    }
    Ok(RankingEval {
        recall: recall.estimate(),
        ndcg: ndcg.estimate(),
        users_evaluated: recall.count(),
        users_skipped: skipped,
    })
}

/// Recall@n and nDCG@n of the CFAE (or the nested model when an SAE is given)
/// on fold-in holdouts, masking the input items.
pub fn evaluate_ranking(
    cfae: &Cfae,
    sae: Option<&SaeModel>,
    holdouts: &BTreeMap<u32, HoldoutPair>,
    n: usize,
) -> Result<RankingEval> {
    if let Some(s) = sae {
        nested::check_compatible(cfae, s)?;
    }
    ranking_from(holdouts, n, |pair| {
        let scores = nested::nested_scores(cfae, sae, &pair.input_items, None)?;
        Ok(top_n(scores.view(), n, &pair.input_items).into_iter().map(|e| e.0).collect())
    })
}

/// Global-popularity top-n with input items masked.
pub fn popularity_ranking(
    item_counts: &[u64],
    holdouts: &BTreeMap<u32, HoldoutPair>,
    n: usize,
) -> Result<RankingEval> {
    let scores = Array1::from_iter(item_counts.iter().map(|&c| c as f64));
    ranking_from(holdouts, n, |pair| {
        Ok(top_n(scores.view(), n, &pair.input_items).into_iter().map(|e| e.0).collect())
    })
}

/// `nested / base × 100`; zero when the base is zero.
pub fn recovered_pct(nested: f64, base: f64) -> f64 {
    if base > 0.0 {
        nested / base * 100.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub mean: f64,
    pub evaluated: usize,
    pub excluded_zero_rows: usize,
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 {
        return None;
    }
    if nb == 0.0 {
        return Some(0.0);
    }
    Some(a.dot(&b) / (na * nb))
}

/// Mean cosine between standardized inputs and their SAE reconstructions.
/// Rows that standardize to the zero vector are excluded and counted.
pub fn reconstruction_cosine(sae: &SaeModel, embeddings: ArrayView2<'_, f64>) -> CosineStats {
    let mut s = Summary::default();
    let mut excluded = 0;
    for row in embeddings.axis_iter(Axis(0)) {
        let (y, recon, _) = sae.reconstruct_standardized(row);
        match cosine(y.view(), recon.view()) {
            Some(c) => s.push(c),
            None => excluded += 1,
        }
    }
    CosineStats {
        mean: s.mean(),
        evaluated: s.count(),
        excluded_zero_rows: excluded,
    }
}

/// Mean number of active neurons per input.
pub fn l0_mean(sae: &SaeModel, embeddings: ArrayView2<'_, f64>) -> f64 {
    let mut s = Summary::default();
    for row in embeddings.axis_iter(Axis(0)) {
        s.push(sae.encode(row).l0() as f64);
    }
    s.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n: usize,
    pub recall_at_n: Estimate,
    pub ndcg_at_n: Estimate,
    pub users_evaluated: usize,
    pub l0_mean: Option<f64>,
    pub recon_cosine_mean: Option<f64>,
    pub recovered_recall_pct: f64,
    pub recovered_ndcg_pct: f64,
    pub recall_denominator: String,
}

/// Full report for a CFAE, or for the nested model when an SAE is given.
/// Sparsity and reconstruction are measured on the holdout input embeddings.
pub fn metrics_report(
    cfae: &Cfae,
    sae: Option<&SaeModel>,
    holdouts: &BTreeMap<u32, HoldoutPair>,
    n: usize,
) -> Result<MetricsReport> {
    let base = evaluate_ranking(cfae, None, holdouts, n)?;
    let (eval, l0, cos, model) = match sae {
        None => (base, None, None, cfae.name().to_owned()),
        Some(s) => {
            let eval = evaluate_ranking(cfae, Some(s), holdouts, n)?;
            let emb = holdout_embeddings(cfae, holdouts);
            (
                eval,
                Some(l0_mean(s, emb.view())),
                Some(reconstruction_cosine(s, emb.view()).mean),
                format!("{}+sae-{}", cfae.name(), s.variant.name()),
            )
        }
    };
    Ok(MetricsReport {
        model,
        n,
        recall_at_n: eval.recall,
        ndcg_at_n: eval.ndcg,
        users_evaluated: eval.users_evaluated,
        l0_mean: l0,
        recon_cosine_mean: cos,
        recovered_recall_pct: recovered_pct(eval.recall.mean, base.recall.mean),
        recovered_ndcg_pct: recovered_pct(eval.ndcg.mean, base.ndcg.mean),
        recall_denominator: RECALL_DENOMINATOR.to_owned(),
    })
}

/// CFAE embeddings of the holdout input histories, in user order.
pub fn holdout_embeddings(cfae: &Cfae, holdouts: &BTreeMap<u32, HoldoutPair>) -> ndarray::Array2<f64> {
    let rows: Vec<&[u32]> = holdouts.values().map(|p| p.input_items.as_slice()).collect();
    cfae.encode_batch(&rows)
}

/// One grid point of a sparsity/accuracy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: SaeVariant,
    pub width_ratio: usize,
    pub loss: LossKind,
    pub lambda1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cell: SweepCell,
    pub status: String,
    pub l0_mean: f64,
    pub recon_cosine: f64,
    pub recall_at_n: f64,
    pub ndcg_at_n: f64,
    pub recovered_recall_pct: f64,
    pub recovered_ndcg_pct: f64,
    pub dead_fraction: f64,
}

impl SweepOutcome {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Trains one SAE per cell on `train_emb` (early stopping on `val_emb`) and
/// evaluates the nested model on the holdouts against the bare CFAE. A failing
/// cell is recorded and the sweep continues.
pub fn sparsity_accuracy_sweep(
    cfae: &Cfae,
    train_emb: ArrayView2<'_, f64>,
    val_emb: Option<ArrayView2<'_, f64>>,
    holdouts: &BTreeMap<u32, HoldoutPair>,
    base_cfg: &SaeConfig,
    grid: &[SweepCell],
    n: usize,
) -> Result<Vec<SweepOutcome>> {
    let base = evaluate_ranking(cfae, None, holdouts, n)?;
    let emb = holdout_embeddings(cfae, holdouts);
    let mut out = Vec::with_capacity(grid.len());
    for cell in grid {
        let cfg = SaeConfig {
            variant: cell.variant,
            width_ratio: cell.width_ratio,
            loss: cell.loss,
            lambda1: cell.lambda1,
            ..base_cfg.clone()
        };
        let result = sae::train(train_emb, val_emb, &cfg).and_then(|model| {
            let eval = evaluate_ranking(cfae, Some(&model), holdouts, n)?;
            Ok((model, eval))
        });
        let outcome = match result {
            Ok((model, eval)) => SweepOutcome {
                cell: *cell,
                status: "ok".into(),
                l0_mean: l0_mean(&model, emb.view()),
                recon_cosine: reconstruction_cosine(&model, emb.view()).mean,
                recall_at_n: eval.recall.mean,
                ndcg_at_n: eval.ndcg.mean,
                recovered_recall_pct: recovered_pct(eval.recall.mean, base.recall.mean),
                recovered_ndcg_pct: recovered_pct(eval.ndcg.mean, base.ndcg.mean),
                dead_fraction: model.meta.dead_fraction,
            },
            Err(e) => {
                log::warn!("sweep cell {cell:?} failed: {e}");
                SweepOutcome {
                    cell: *cell,
                    status: format!("failed: {e}"),
                    l0_mean: f64::NAN,
                    recon_cosine: f64::NAN,
                    recall_at_n: f64::NAN,
                    ndcg_at_n: f64::NAN,
                    recovered_recall_pct: f64::NAN,
                    recovered_ndcg_pct: f64::NAN,
                    dead_fraction: f64::NAN,
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

fn variant_param(v: SaeVariant) -> String {
    v.k().map(|k| k.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepOutcome]) -> String {
    let mut out = String::from(
        "variant,k,width_ratio,loss,lambda1,status,l0_mean,recon_cosine,recall_at_n,ndcg_at_n,recovered_recall_pct,recovered_ndcg_pct,dead_fraction\n",
    );
    for r in rows {
        let status = r.status.replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.cell.variant.name(),
            variant_param(r.cell.variant),
            r.cell.width_ratio,
            r.cell.loss.name(),
            fmt_real(r.cell.lambda1),
            status,
            fmt_real(r.l0_mean),
            fmt_real(r.recon_cosine),
            fmt_real(r.recall_at_n),
            fmt_real(r.ndcg_at_n),
            fmt_real(r.recovered_recall_pct),
            fmt_real(r.recovered_ndcg_pct),
            fmt_real(r.dead_fraction),
        ));
    }
    out
}

/// Plot-ready series: one per (variant, loss, width), with L0, reconstruction
/// cosine and recovered percentages against the sparsity knob.
pub fn sweep_plot_json(rows: &[SweepOutcome]) -> serde_json::Value {
    let mut series: BTreeMap<String, Vec<&SweepOutcome>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        let key = format!("{}-{}-{}x", r.cell.variant.name(), r.cell.loss.name(), r.cell.width_ratio);
        series.entry(key).or_default().push(r);
    }
    let series: Vec<serde_json::Value> = series
        .into_iter()
        .map(|(name, rs)| {
            let knob: Vec<f64> = rs
                .iter()
                .map(|r| r.cell.variant.k().map(|k| k as f64).unwrap_or(r.cell.lambda1))
                .collect();
            serde_json::json!({
                "name": name,
                "x": knob,
                "l0": rs.iter().map(|r| r.l0_mean).collect::<Vec<_>>(),
                "recon_cosine": rs.iter().map(|r| r.recon_cosine).collect::<Vec<_>>(),
                "recovered_recall_pct": rs.iter().map(|r| r.recovered_recall_pct).collect::<Vec<_>>(),
                "recovered_ndcg_pct": rs.iter().map(|r| r.recovered_ndcg_pct).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "panels": ["l0", "recon_cosine", "recovered_recall_pct"], "series": series })
}

/// Number of adjacent decreases in a sequence.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecovery {
    pub concept: String,
    pub neuron: Option<u32>,
    pub top_items: Vec<u32>,
    pub in_block_fraction: f64,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub score: f64,
    pub distinct_neurons: usize,
    pub concepts: Vec<ConceptRecovery>,
}

pub const RECOVERY_TOP_ITEMS: usize = 10;
pub const RECOVERY_BLOCK_SHARE: f64 = 0.9;

/// Items with the highest activation of `neuron`, strongest first, lower item
/// index on ties. Only items that activate the neuron are returned.
pub fn top_activating_items(codes: &[SparseCode], neuron: u32, limit: usize) -> Vec<u32> {
    let mut acts: Vec<(u32, f64)> = codes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            c.entries()
                .iter()
                .find(|e| e.0 == neuron)
                .map(|e| (i as u32, e.1))
        })
        .collect();
    acts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    acts.into_iter().take(limit).map(|e| e.0).collect()
}

/// Fraction of planted concepts whose representative neuron has at least 90%
/// of its top-10 activating items inside the concept's item set.
/// `item_codes` are the SAE codes of single-item histories and
/// `concept_items[g]` the items carrying concept `g`, named `concept_names[g]`.
pub fn concept_recovery_score(
    map: &ConceptNeuronMap,
    item_codes: &[SparseCode],
    concept_names: &[String],
    concept_items: &[Vec<u32>],
) -> RecoveryReport {
    let mut concepts = Vec::with_capacity(concept_names.len());
    let mut neurons = std::collections::BTreeSet::new();
    for (name, items) in concept_names.iter().zip(concept_items) {
        let neuron = map
            .tag_index(name)
            .and_then(|t| map.neuron_for_tag(t, MappingKind::Representative));
        let top = neuron
            .map(|j| top_activating_items(item_codes, j, RECOVERY_TOP_ITEMS))
            .unwrap_or_default();
        let inside = top.iter().filter(|i| items.binary_search(i).is_ok()).count();
        let frac = if top.is_empty() {
            0.0
        } else {
            inside as f64 / top.len() as f64
        };
        if let Some(j) = neuron {
            neurons.insert(j);
        }
        concepts.push(ConceptRecovery {
            concept: name.clone(),
            neuron,
            top_items: top,
            in_block_fraction: frac,
            recovered: frac >= RECOVERY_BLOCK_SHARE,
        });
    }
    let score = if concepts.is_empty() {
        0.0
    } else {
        concepts.iter().filter(|c| c.recovered).count() as f64 / concepts.len() as f64
    };
    RecoveryReport {
        score,
        distinct_neurons: neurons.len(),
        concepts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TagTable;
    use crate::elsa::ElsaModel;
    use crate::sae::{SaeParams, Standardizer};
    use ndarray::{array, Array2};

    fn pair(input: &[u32], target: &[u32]) -> HoldoutPair {
        HoldoutPair {
            input_items: input.to_vec(),
            target_items: target.to_vec(),
        }
    }

    #[test]
    fn popularity_masks_inputs() {
        let counts = [10, 9, 8, 7, 1];
        let mut h = BTreeMap::new();
        h.insert(0, pair(&[0], &[1, 2]));
        h.insert(1, pair(&[1], &[4]));
        h.insert(2, pair(&[2], &[]));
        let e = popularity_ranking(&counts, &h, 2).unwrap();
        assert_eq!(e.users_evaluated, 2);
        assert_eq!(e.users_skipped, 1);
        assert!((e.recall.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recovered_pct_of_base_against_itself_is_exactly_100() {
        for v in [0.123456789, 0.396, 1.0, 1e-7] {
            assert_eq!(recovered_pct(v, v), 100.0);
        }
        let cfae = Cfae::Elsa(ElsaModel::random(12, 4, 3));
        let mut h = BTreeMap::new();
        h.insert(0, pair(&[0, 1], &[5, 6]));
        h.insert(3, pair(&[2, 7], &[1]));
        let r = metrics_report(&cfae, None, &h, 5).unwrap();
        assert_eq!(r.recovered_recall_pct, 100.0);
        assert_eq!(r.recovered_ndcg_pct, 100.0);
    }

    fn identity_sae(p: usize) -> SaeModel {
        // W_E = [I; -I], W_D = [I, -I]: ReLU(y) - ReLU(-y) = y.
        let mut w_enc = Array2::zeros((2 * p, p));
        let mut w_dec = Array2::zeros((p, 2 * p));
        for i in 0..p {
            w_enc[[i, i]] = 1.0;
            w_enc[[p + i, i]] = -1.0;
            w_dec[[i, i]] = 1.0;
            w_dec[[i, p + i]] = -1.0;
        }
        let params = SaeParams {
            w_enc,
            b_enc: Array1::zeros(2 * p),
            w_dec,
            b_dec: Array1::zeros(p),
        };
        SaeModel::new(params, SaeVariant::Basic, LossKind::L2, 0.0, Standardizer::identity(p)).unwrap()
    }

    #[test]
    fn identity_sae_has_unit_cosine_and_full_recovery() {
        let sae = identity_sae(3);
        let emb = array![[1.0, -2.0, 0.5], [0.0, 0.0, 0.0], [3.0, 1.0, -1.0]];
        let c = reconstruction_cosine(&sae, emb.view());
        assert!((c.mean - 1.0).abs() < 1e-12);
        assert_eq!(c.excluded_zero_rows, 1);
        assert_eq!(c.evaluated, 2);

        let cfae = Cfae::Elsa(ElsaModel::random(10, 3, 9));
        let mut h = BTreeMap::new();
        h.insert(0, pair(&[0, 1], &[5, 6]));
        h.insert(1, pair(&[3], &[2, 9]));
        let r = metrics_report(&cfae, Some(&sae), &h, 4).unwrap();
        assert!((r.recovered_recall_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn negated_reconstruction_has_cosine_minus_one() {
        let mut sae = identity_sae(2);
        sae.params.w_dec.mapv_inplace(|v| -v);
        let c = reconstruction_cosine(&sae, array![[1.0, 2.0], [-0.5, 0.1]].view());
        assert!((c.mean + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_dense_oracle() {
        let params = SaeParams::random(3, 6, 4);
        let st = Standardizer {
            mean: array![0.1, -0.2, 0.3],
            scale: array![2.0, 0.5, 1.0],
        };
        let sae = SaeModel::new(params, SaeVariant::Basic, LossKind::L2, 0.0, st.clone()).unwrap();
        let emb = array![[1.0, 0.4, -0.3], [0.2, 2.0, 1.0]];
        let mut expect = 0.0;
        for row in emb.rows() {
            let y: Vec<f64> = (0..3).map(|i| (row[i] - st.mean[i]) / st.scale[i]).collect();
            let mut c = vec![0.0; 6];
            for (j, cj) in c.iter_mut().enumerate() {
                let mut s = sae.params.b_enc[j];
                for i in 0..3 {
                    s += sae.params.w_enc[[j, i]] * (y[i] - sae.params.b_dec[i]);
                }
                *cj = s.max(0.0);
            }
            let r: Vec<f64> = (0..3)
                .map(|i| sae.params.b_dec[i] + (0..6).map(|j| sae.params.w_dec[[i, j]] * c[j]).sum::<f64>())
                .collect();
            let dot: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            expect += dot / (ny * nr) / 2.0;
        }
        let got = reconstruction_cosine(&sae, emb.view()).mean;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn inversions_counts_adjacent_drops() {
        assert_eq!(inversions(&[1.0, 2.0, 2.0, 3.0]), 0);
        assert_eq!(inversions(&[1.0, 0.5, 2.0, 1.0]), 2);
    }

    fn block_map(g: usize, per: usize, neuron_of: impl Fn(usize) -> u32, width: usize) -> (ConceptNeuronMap, Vec<SparseCode>, Vec<String>, Vec<Vec<u32>>) {
        let names: Vec<String> = (0..g).map(|c| format!("c{c}")).collect();
        let n = g * per;
        let mut counts = BTreeMap::new();
        for i in 0..n {
            counts.insert((names[i / per].clone(), i as u32), 1u64);
        }
        let tags = TagTable::from_counts(&counts, n, 1).unwrap();
        let codes: Vec<SparseCode> = (0..n)
            .map(|i| SparseCode::new(width, vec![(neuron_of(i), 1.0 + (i % per) as f64)]).unwrap())
            .collect();
        let map = ConceptNeuronMap::build(&tags, &codes, width);
        let blocks = (0..g).map(|c| ((c * per) as u32..((c + 1) * per) as u32).collect()).collect();
        (map, codes, names, blocks)
    }

    #[test]
    fn block_diagonal_codes_recover_every_concept() {
        let (map, codes, names, blocks) = block_map(4, 12, |i| (i / 12) as u32 * 2, 8);
        let r = concept_recovery_score(&map, &codes, &names, &blocks);
        assert_eq!(r.score, 1.0);
        assert_eq!(r.distinct_neurons, 4);
        assert!(r.concepts.iter().all(|c| c.top_items.len() == 10));
    }

    #[test]
    fn scrambled_codes_score_near_block_share() {
        let mut g = crate::rng::seeded(11);
        let assign: Vec<u32> = (0..400).map(|_| crate::rng::below(&mut g, 16) as u32).collect();
        let (map, codes, names, blocks) = block_map(16, 25, |i| assign[i], 16);
        let r = concept_recovery_score(&map, &codes, &names, &blocks);
        assert!(r.score < 0.2, "score {}", r.score);
    }
}
