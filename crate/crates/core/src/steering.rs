//! Steering sparse user codes toward labeled neurons, and the segment-level
//! steering evaluation.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::concept_map::{ConceptNeuronMap, MappingKind};
use crate::corpus::{HoldoutPair, TagTable};
use crate::error::{Error, Result};
use crate::metrics::{recall_at_n, top_n, Summary};
use crate::nested::{self, Cfae};
use crate::sae::{SaeModel, SparseCode};

/// Weighted neuron boosts mixed into a user's code with intensity `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDirective {
    boosts: Vec<(u32, f64)>,
    alpha: f64,
}

impl SteeringDirective {
    /// Validates `alpha ∈ [0, 1]`, non-negative weights summing to one, and
    /// distinct neurons. Boosts are stored sorted by neuron.
    pub fn new(mut boosts: Vec<(u32, f64)>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if boosts.is_empty() {
            return Err(Error::Config("a directive needs at least one boost".into()));
        }
        if boosts.iter().any(|&(_, w)| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("boost weights must be finite and non-negative".into()));
        }
        let sum: f64 = boosts.iter().map(|b| b.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("boost weights must sum to 1, got {sum}")));
        }
        boosts.sort_by_key(|b| b.0);
        if boosts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("duplicate neuron in boosts".into()));
        }
        Ok(Self { boosts, alpha })
    }

    /// Like [`SteeringDirective::new`] but rescales weights to unit sum first.
    /// Boosts on the same neuron are merged.
    pub fn normalized(boosts: Vec<(u32, f64)>, alpha: f64) -> Result<Self> {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (j, w) in boosts {
            *merged.entry(j).or_default() += w;
        }
        let sum: f64 = merged.values().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Config("boost weights must have a positive sum".into()));
        }
        Self::new(merged.into_iter().map(|(j, w)| (j, w / sum)).collect(), alpha)
    }

    pub fn single(neuron: u32, alpha: f64) -> Result<Self> {
        Self::new(vec![(neuron, 1.0)], alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn boosts(&self) -> &[(u32, f64)] {
        &self.boosts
    }

    fn check_width(&self, dim: usize) -> Result<()> {
        match self.boosts.iter().find(|b| b.0 as usize >= dim) {
            Some(b) => Err(Error::Dimension(format!(
                "boosted neuron {} out of range for width {dim}",
                b.0
            ))),
            None => Ok(()),
        }
    }

    /// Mass-preserving steered code `Σz · z̃` used for decoding.
    ///
    /// Entry `j` is `(1-α) z_j + α Σz w_j`, which equals `Σz` times the
    /// unit-sum blend and reduces to `z` itself (bit for bit) at `α = 0`.
    /// An empty code can only be steered at `α = 1`, where the blend is
    /// decoded at unit mass.
    pub fn apply(&self, z: &SparseCode) -> Result<SparseCode> {
        self.check_width(z.dim())?;
        let mass = z.sum();
        if mass <= 0.0 && self.alpha < 1.0 {
            return Err(Error::DegenerateProfile);
        }
        let mass = if mass > 0.0 { mass } else { 1.0 };
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for &(j, v) in z.entries() {
            merged.insert(j, (1.0 - self.alpha) * v);
        }
        for &(j, w) in &self.boosts {
            *merged.entry(j).or_insert(0.0) += self.alpha * mass * w;
        }
        let entries = merged.into_iter().filter(|e| e.1 > 0.0).collect();
        SparseCode::new(z.dim(), entries)
    }
}

/// Unit-sum steered code `(1-α) z/Σz + α Σ_j w_j onehot(j)` as a dense vector.
pub fn steer_code(z: &SparseCode, directive: &SteeringDirective) -> Result<Array1<f64>> {
    directive.check_width(z.dim())?;
    let mass = z.sum();
    let mut out = Array1::zeros(z.dim());
    if mass > 0.0 {
        for &(j, v) in z.entries() {
            out[j as usize] = (1.0 - directive.alpha) * (v / mass);
        }
    } else if directive.alpha < 1.0 {
        return Err(Error::DegenerateProfile);
    }
    for &(j, w) in &directive.boosts {
        out[j as usize] += directive.alpha * w;
    }
    Ok(out)
}

/// Top-`n` items for a history, optionally steered and with seen items masked.
pub fn recommend(
    cfae: &Cfae,
    sae: Option<&SaeModel>,
    history: &[u32],
    directive: Option<&SteeringDirective>,
    n_rec: usize,
    mask_seen: bool,
) -> Result<Vec<(u32, f64)>> {
    let scores = nested::nested_scores(cfae, sae, history, directive)?;
    let exclude: &[u32] = if mask_seen { history } else { &[] };
    Ok(top_n(scores.view(), n_rec, exclude))
}

/// Items sharing a tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub tag: u32,
    pub name: String,
    /// Sorted item indices.
    pub items: Vec<u32>,
}

impl Segment {
    pub fn contains(&self, item: u32) -> bool {
        self.items.binary_search(&item).is_ok()
    }
}

/// Picks the tag whose share among holdout items most exceeds its share among
/// input items. Only tags carried by at least one holdout item qualify; ties
/// go to the lexicographically smaller tag.
pub fn select_salient_segment(pair: &HoldoutPair, tags: &TagTable) -> Result<Segment> {
    let by_item = tags.tags_by_item();
    let shares = |items: &[u32]| {
        let mut counts = vec![0usize; tags.num_tags()];
        for &i in items {
            if let Some(ts) = by_item.get(i as usize) {
                for &t in ts {
                    counts[t as usize] += 1;
                }
            }
        }
        let len = items.len().max(1) as f64;
        (counts.iter().map(|&c| c as f64 / len).collect::<Vec<_>>(), counts)
    };
    let (target_share, target_counts) = shares(&pair.target_items);
    let (input_share, _) = shares(&pair.input_items);
    let mut best: Option<(usize, f64)> = None;
    // Tags are stored in lexicographic order, so a strict comparison keeps the
    // smaller tag on ties.
    for t in 0..tags.num_tags() {
        if target_counts[t] == 0 {
            continue;
        }
        let lift = target_share[t] - input_share[t];
        if best.is_none_or(|(_, b)| lift > b) {
            best = Some((t, lift));
        }
    }
    let (t, _) = best.ok_or(Error::NoSegment)?;
    Ok(Segment {
        tag: t as u32,
        name: tags.tags()[t].clone(),
        items: tags.items_by_tag()[t].clone(),
    })
}

/// One cell of the relevance-versus-steering trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mapping_kind: MappingKind,
    pub alpha: f64,
    pub recall_at_20: f64,
    pub segment_precision_at_20: f64,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

pub const DEFAULT_ALPHAS: [f64; 8] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.4, 0.6, 0.8];

/// Steers every user toward their salient segment over an alpha grid and
/// reports mean Recall@n against the holdout and mean segment precision@n.
/// Input items are masked. Users without a segment, without a mapped neuron,
/// or with an empty code are skipped and counted.
pub fn steering_sweep(
    cfae: &Cfae,
    sae: &SaeModel,
    map: &ConceptNeuronMap,
    tags: &TagTable,
    users: &BTreeMap<u32, HoldoutPair>,
    alphas: &[f64],
    kind: MappingKind,
    n: usize,
) -> Result<Vec<SweepRow>> {
    nested::check_compatible(cfae, sae)?;
    let mut recall = vec![Summary::default(); alphas.len()];
    let mut precision = vec![Summary::default(); alphas.len()];
    let mut skipped = 0usize;
    for pair in users.values() {
        let Ok(segment) = select_salient_segment(pair, tags) else {
            skipped += 1;
            continue;
        };
        let Some(neuron) = map.neuron_for_tag(segment.tag, kind) else {
            skipped += 1;
            continue;
        };
        let code = nested::user_code(cfae, sae, &pair.input_items);
        if code.l0() == 0 {
            skipped += 1;
            continue;
        }
        for (ix, &alpha) in alphas.iter().enumerate() {
            let directive = SteeringDirective::single(neuron, alpha)?;
            let steered = directive.apply(&code)?;
            let y = sae.decode(&steered);
            let scores = cfae.decode(y.view(), &pair.input_items);
            let top = top_n(scores.view(), n, &pair.input_items);
            let ranked: Vec<u32> = top.iter().map(|e| e.0).collect();
            if let Some(r) = recall_at_n(&ranked, &pair.target_items, n) {
                recall[ix].push(r);
            }
            let hits = ranked.iter().filter(|&&i| segment.contains(i)).count();
            precision[ix].push(hits as f64 / n as f64);
        }
    }
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(ix, &alpha)| SweepRow {
            mapping_kind: kind,
            alpha,
            recall_at_20: recall[ix].mean(),
            segment_precision_at_20: precision[ix].mean(),
            users_evaluated: precision[ix].count(),
            users_skipped: skipped,
        })
        .collect())
}

/// CSV with header `mapping_kind,alpha,recall_at_20,segment_precision_at_20,users_evaluated`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mapping_kind,alpha,recall_at_20,segment_precision_at_20,users_evaluated\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mapping_kind.name(),
            crate::report::fmt_real(r.alpha),
            crate::report::fmt_real(r.recall_at_20),
            crate::report::fmt_real(r.segment_precision_at_20),
            r.users_evaluated
        ));
    }
    out
}
