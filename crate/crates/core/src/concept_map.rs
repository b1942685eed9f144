//! Labeling sparse neurons with tags.
//!
//! Items are pushed through the encoders to get per-item sparse codes `Z`.
//! Multiplying the joint tag-item distribution by `Z` gives the tag-activation
//! matrix `M` (tags x neurons), which is scored with TF-IDF in two
//! orientations:
//!
//! * tags as terms, neurons as documents (`t_to_n`): per tag the argmax neuron
//!   is the most *unique* one; per neuron the argmax tag is the most
//!   *characteristic* one.
//! * neurons as terms, tags as documents (`n_to_t`): per neuron the argmax tag
//!   is the most *distinctive* one; per tag the argmax neuron is the most
//!   *representative* one.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::TagTable;
use crate::nested::Cfae;
use crate::sae::{SaeModel, SparseCode};

pub const TFIDF_VARIANT: &str = "tf=column-normalized-mass;idf=ln(N/(1+df))+1;clamp>=0";
pub const SMOOTHING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    /// `argmax_n` over the tags-as-terms scores.
    Unique,
    /// `argmax_n` over the neurons-as-terms scores.
    Representative,
}

impl MappingKind {
    pub fn name(&self) -> &'static str {
        match self {
            MappingKind::Unique => "unique",
            MappingKind::Representative => "representative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    TagsAsTerms,
    NeuronsAsTerms,
}

/// Input used to probe the encoders with a single item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemInput {
    /// The plain indicator `onehot(i)`.
    OneHot,
    /// `c · onehot(i)` with `c` the mean norm of the SAE's training
    /// embeddings. For ELSA the item then sits at the scale of a typical user
    /// embedding; MultVAE normalizes its input, so `c` has no effect there.
    #[default]
    UserScale,
}

impl ItemInput {
    pub fn name(&self) -> &'static str {
        match self {
            ItemInput::OneHot => "one-hot",
            ItemInput::UserScale => "user-scale",
        }
    }
}

/// Sparse code of every item, probed with the default [`ItemInput`].
pub fn item_codes(cfae: &Cfae, sae: &SaeModel) -> Vec<SparseCode> {
    item_codes_with(cfae, sae, ItemInput::default())
}

pub fn item_codes_with(cfae: &Cfae, sae: &SaeModel, input: ItemInput) -> Vec<SparseCode> {
    let weight = match (input, cfae) {
        (ItemInput::UserScale, Cfae::Elsa(_)) if sae.meta.embedding_norm > 0.0 => sae.meta.embedding_norm,
        _ => 1.0,
    };
    (0..cfae.num_items() as u32)
        .map(|i| {
            // The ELSA encoder is linear, so scaling its output scales the input.
            let y = cfae.encode(&[i]) * weight;
            sae.encode(y.view())
        })
        .collect()
}

/// `M = P Z` with `P` the joint tag-item distribution.
pub fn tag_activation_matrix(tags: &TagTable, codes: &[SparseCode], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((tags.num_tags(), width));
    for (t, i, p) in tags.p_hat() {
        for &(j, v) in codes[i as usize].entries() {
            m[[t as usize, j as usize]] += p * v;
        }
    }
    m
}

/// TF-IDF over a tags x neurons matrix. The output keeps the input layout.
pub fn tfidf(m: ArrayView2<'_, f64>, orientation: Orientation) -> Array2<f64> {
    match orientation {
        // Documents are columns, terms are rows.
        Orientation::TagsAsTerms => tfidf_rows_as_terms(m),
        Orientation::NeuronsAsTerms => tfidf_rows_as_terms(m.t()).reversed_axes(),
    }
}

fn tfidf_rows_as_terms(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let doc_mass = m.sum_axis(Axis(0));
    let live_docs = doc_mass.iter().filter(|&&s| s > 0.0).count();
    if live_docs == 0 {
        log::warn!("TF-IDF input is all zero");
        return Array2::zeros(m.raw_dim());
    }
    let mut out = Array2::zeros(m.raw_dim());
    for (mut out_row, row) in out.axis_iter_mut(Axis(0)).zip(m.axis_iter(Axis(0))) {
        let df = row.iter().filter(|&&v| v > 0.0).count();
        let idf = (live_docs as f64 / (1 + df) as f64).ln() + 1.0;
        for ((o, &v), &mass) in out_row.iter_mut().zip(row.iter()).zip(doc_mass.iter()) {
            if v > 0.0 {
                *o = (v / mass * idf).max(0.0);
            }
        }
    }
    out
}

/// Index of the largest strictly positive entry (lowest index on ties).
fn argmax_positive(values: ArrayView1<'_, f64>) -> Option<u32> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0 as u32)
}

/// Counterparts selected by more than one key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// neuron -> tags that chose it as their unique neuron (only shared ones).
    pub shared_unique_neurons: BTreeMap<u32, Vec<u32>>,
    pub shared_representative_neurons: BTreeMap<u32, Vec<u32>>,
    /// tag -> neurons that chose it as their characteristic tag (only shared ones).
    pub shared_characteristic_tags: BTreeMap<u32, Vec<u32>>,
    pub shared_distinctive_tags: BTreeMap<u32, Vec<u32>>,
}

fn shared<I: Iterator<Item = (u32, Option<u32>)>>(pairs: I) -> BTreeMap<u32, Vec<u32>> {
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (key, target) in pairs {
        if let Some(t) = target {
            groups.entry(t).or_default().push(key);
        }
    }
    groups.retain(|_, v| v.len() > 1);
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxMaps {
    pub unique_neuron_for_tag: Vec<Option<u32>>,
    pub characteristic_tag_for_neuron: Vec<Option<u32>>,
    pub distinctive_tag_for_neuron: Vec<Option<u32>>,
    pub representative_neuron_for_tag: Vec<Option<u32>>,
    pub overlap: OverlapReport,
}

/// The four argmax maps over tags x neurons score matrices. Rows or columns
/// without any positive score map to `None`.
pub fn build_argmax_maps(t_to_n: ArrayView2<'_, f64>, n_to_t: ArrayView2<'_, f64>) -> ArgmaxMaps {
    let rows = |m: ArrayView2<'_, f64>| m.axis_iter(Axis(0)).map(argmax_positive).collect::<Vec<_>>();
    let cols = |m: ArrayView2<'_, f64>| m.axis_iter(Axis(1)).map(argmax_positive).collect::<Vec<_>>();
    let unique_neuron_for_tag = rows(t_to_n);
    let characteristic_tag_for_neuron = cols(t_to_n);
    let distinctive_tag_for_neuron = cols(n_to_t);
    let representative_neuron_for_tag = rows(n_to_t);
    let enumerate = |v: &[Option<u32>]| v.iter().copied().enumerate().map(|(k, t)| (k as u32, t)).collect::<Vec<_>>();
    let overlap = OverlapReport {
        shared_unique_neurons: shared(enumerate(&unique_neuron_for_tag).into_iter()),
        shared_representative_neurons: shared(enumerate(&representative_neuron_for_tag).into_iter()),
        shared_characteristic_tags: shared(enumerate(&characteristic_tag_for_neuron).into_iter()),
        shared_distinctive_tags: shared(enumerate(&distinctive_tag_for_neuron).into_iter()),
    };
    ArgmaxMaps {
        unique_neuron_for_tag,
        characteristic_tag_for_neuron,
        distinctive_tag_for_neuron,
        representative_neuron_for_tag,
        overlap,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNeuronMap {
    pub tags: Vec<String>,
    pub m: Array2<f64>,
    pub t_to_n: Array2<f64>,
    pub n_to_t: Array2<f64>,
    pub maps: ArgmaxMaps,
    /// Neurons with a nonzero column in `m`.
    pub live_neurons: Vec<u32>,
    pub width: usize,
}

impl ConceptNeuronMap {
    pub fn build(tags: &TagTable, codes: &[SparseCode], width: usize) -> Self {
        let m = tag_activation_matrix(tags, codes, width);
        Self::from_matrix(tags.tags().to_vec(), m)
    }

    pub fn from_matrix(tags: Vec<String>, m: Array2<f64>) -> Self {
        let t_to_n = tfidf(m.view(), Orientation::TagsAsTerms);
        let n_to_t = tfidf(m.view(), Orientation::NeuronsAsTerms);
        let maps = build_argmax_maps(t_to_n.view(), n_to_t.view());
        let live_neurons = m
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&v| v > 0.0))
            .map(|(j, _)| j as u32)
            .collect();
        let width = m.ncols();
        Self {
            tags,
            m,
            t_to_n,
            n_to_t,
            maps,
            live_neurons,
            width,
        }
    }

    pub fn tag_index(&self, tag: &str) -> Option<u32> {
        self.tags.iter().position(|t| t == tag).map(|i| i as u32)
    }

    pub fn neuron_for_tag(&self, tag: u32, kind: MappingKind) -> Option<u32> {
        let map = match kind {
            MappingKind::Unique => &self.maps.unique_neuron_for_tag,
            MappingKind::Representative => &self.maps.representative_neuron_for_tag,
        };
        map.get(tag as usize).copied().flatten()
    }

    pub fn inactive_neurons(&self) -> usize {
        self.width - self.live_neurons.len()
    }

    /// Highest-scoring tags for a neuron under the tags-as-terms scores.
    pub fn top_tags(&self, neuron: u32, limit: usize) -> Vec<(u32, f64)> {
        let col = self.t_to_n.column(neuron as usize);
        let mut tags: Vec<(u32, f64)> = col
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(t, &v)| (t as u32, v))
            .collect();
        tags.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        tags.truncate(limit);
        tags
    }

    pub fn to_json(&self, top: usize) -> ConceptMapJson {
        let neurons = self
            .live_neurons
            .iter()
            .map(|&n| NeuronEntry {
                id: n,
                top_tags: self
                    .top_tags(n, top)
                    .into_iter()
                    .map(|(t, score)| TagScore {
                        tag: self.tags[t as usize].clone(),
                        score,
                    })
                    .collect(),
                distinctive_tag: self.maps.distinctive_tag_for_neuron[n as usize]
                    .map(|t| self.tags[t as usize].clone()),
            })
            .collect();
        let tags = self
            .tags
            .iter()
            .enumerate()
            .map(|(t, name)| TagEntry {
                tag: name.clone(),
                unique_neuron: self.maps.unique_neuron_for_tag[t],
                representative_neuron: self.maps.representative_neuron_for_tag[t],
            })
            .collect();
        ConceptMapJson {
            neurons,
            tags,
            tfidf_variant: TFIDF_VARIANT.into(),
            log_base: 2,
            width: self.width,
            matrix: self.m.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }

    /// Rebuilds the map from its serialized tag-activation matrix.
    pub fn from_json(json: &ConceptMapJson) -> crate::Result<Self> {
        let rows = json.matrix.len();
        let mut m = Array2::zeros((rows, json.width));
        for (t, row) in json.matrix.iter().enumerate() {
            if row.len() != json.width {
                return Err(crate::Error::Dimension(format!(
                    "concept map row {t} has {} entries, expected {}",
                    row.len(),
                    json.width
                )));
            }
            m.row_mut(t).assign(&ArrayView1::from(row.as_slice()));
        }
        let tags = json.tags.iter().map(|t| t.tag.clone()).collect();
        Ok(Self::from_matrix(tags, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronEntry {
    pub id: u32,
    pub top_tags: Vec<TagScore>,
    pub distinctive_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: String,
    pub unique_neuron: Option<u32>,
    pub representative_neuron: Option<u32>,
}

/// Concept map artifact. `matrix` carries `M` so the map can be rebuilt exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMapJson {
    pub neurons: Vec<NeuronEntry>,
    pub tags: Vec<TagEntry>,
    pub tfidf_variant: String,
    pub log_base: u32,
    pub width: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// Which side of the map a selectivity row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Tag,
    Neuron,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityRow {
    pub side: Side,
    pub key: String,
    pub entropy_bits: f64,
    pub kl_bits: f64,
    pub rel_entropy_decrease: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub rows: Vec<SelectivityRow>,
    /// Entropy of the average distribution.
    pub baseline_entropy_bits: f64,
    pub excluded_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub tags: SideStats,
    pub neurons: SideStats,
}

impl SelectivityReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("side,key,entropy_bits,kl_bits,rel_entropy_decrease\n");
        for row in self.tags.rows.iter().chain(&self.neurons.rows) {
            let side = match row.side {
                Side::Tag => "tag",
                Side::Neuron => "neuron",
            };
            out.push_str(&format!(
                "{side},{},{},{},{}\n",
                csv_field(&row.key),
                crate::report::fmt_real(row.entropy_bits),
                crate::report::fmt_real(row.kl_bits),
                crate::report::fmt_real(row.rel_entropy_decrease)
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn entropy_bits(q: ArrayView1<'_, f64>) -> f64 {
    -q.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// `D_KL(p ‖ q)` in bits.
pub fn kl_bits(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum::<f64>()
        // rounding can leave -1e-16 when p == q
        .max(0.0)
}

/// L1-normalizes, adds `SMOOTHING` to every entry and renormalizes.
pub fn smooth_distribution(row: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let s = row.sum();
    if !(s > 0.0) {
        return None;
    }
    let q = row.mapv(|v| v / s + SMOOTHING);
    let s = q.sum();
    Some(q / s)
}

/// Entropy and divergence from the average for each row of `scores`.
pub fn row_selectivity(scores: ArrayView2<'_, f64>, keys: &[String], side: Side) -> SideStats {
    let mut kept = Vec::new();
    let mut dists = Vec::new();
    let mut excluded = 0;
    for (r, row) in scores.axis_iter(Axis(0)).enumerate() {
        match smooth_distribution(row) {
            Some(q) => {
                kept.push(r);
                dists.push(q);
            }
            None => excluded += 1,
        }
    }
    if dists.is_empty() {
        return SideStats {
            rows: Vec::new(),
            baseline_entropy_bits: 0.0,
            excluded_rows: excluded,
        };
    }
    let mut avg = Array1::<f64>::zeros(scores.ncols());
    for q in &dists {
        avg += q;
    }
    avg /= dists.len() as f64;
    let baseline = entropy_bits(avg.view());
    let rows = kept
        .iter()
        .zip(&dists)
        .map(|(&r, q)| {
            let h = entropy_bits(q.view());
            SelectivityRow {
                side,
                key: keys[r].clone(),
                entropy_bits: h,
                kl_bits: kl_bits(avg.view(), q.view()),
                rel_entropy_decrease: if baseline > 0.0 { (baseline - h) / baseline } else { 0.0 },
            }
        })
        .collect();
    SideStats {
        rows,
        baseline_entropy_bits: baseline,
        excluded_rows: excluded,
    }
}

/// Tag side over live neurons of `t_to_n`; neuron side over live tags of `n_to_t`.
pub fn selectivity(map: &ConceptNeuronMap) -> SelectivityReport {
    let live = &map.live_neurons;
    let live_ix: Vec<usize> = live.iter().map(|&j| j as usize).collect();
    let tag_view = map.t_to_n.select(Axis(1), &live_ix);
    let tags = row_selectivity(tag_view.view(), &map.tags, Side::Tag);

    let live_tags: Vec<usize> = map
        .m
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v > 0.0))
        .map(|(t, _)| t)
        .collect();
    let neuron_view = map.n_to_t.select(Axis(1), &live_ix).t().select(Axis(1), &live_tags);
    let keys: Vec<String> = live.iter().map(|j| j.to_string()).collect();
    let neurons = row_selectivity(neuron_view.view(), &keys, Side::Neuron);
    SelectivityReport { tags, neurons }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_tag_one_item_copies_scaled_code() {
        let mut counts = BTreeMap::new();
        counts.insert(("solo".to_string(), 1u32), 3u64);
        let tags = TagTable::from_counts(&counts, 2, 1).unwrap();
        let codes = vec![
            SparseCode::new(4, vec![(0, 1.0)]).unwrap(),
            SparseCode::new(4, vec![(1, 0.5), (3, 2.0)]).unwrap(),
        ];
        let m = tag_activation_matrix(&tags, &codes, 4);
        assert_eq!(m, array![[0.0, 0.5, 0.0, 2.0]]);
        let zero = tag_activation_matrix(&tags, &[SparseCode::empty(4), SparseCode::empty(4)], 4);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn product_matches_dense_oracle() {
        let mut counts = BTreeMap::new();
        for (t, i, c) in [("a", 0u32, 2u64), ("a", 3, 1), ("b", 1, 1), ("b", 2, 3), ("c", 3, 2)] {
            counts.insert((t.to_string(), i), c);
        }
        let tags = TagTable::from_counts(&counts, 4, 1).unwrap();
        let codes = vec![
            SparseCode::new(3, vec![(0, 1.0), (2, 0.5)]).unwrap(),
            SparseCode::new(3, vec![(1, 2.0)]).unwrap(),
            SparseCode::new(3, vec![(1, 1.0), (2, 1.0)]).unwrap(),
            SparseCode::new(3, vec![(0, 0.25)]).unwrap(),
        ];
        let p = array![
            [2.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 3.0, 0.0],
            [0.0, 0.0, 0.0, 2.0]
        ] / 9.0;
        let z = array![[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [0.0, 1.0, 1.0], [0.25, 0.0, 0.0]];
        let oracle = p.dot(&z);
        let m = tag_activation_matrix(&tags, &codes, 3);
        for (a, b) in m.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tfidf_matches_hand_computation() {
        // 3 tags x 4 neurons; neuron 3 is dead.
        let m = array![[2.0, 0.0, 1.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 3.0, 1.0, 0.0]];
        let t2n = tfidf(m.view(), Orientation::TagsAsTerms);
        // Documents (neurons) alive: 3. Column sums: 4, 4, 2.
        let idf = |df: f64| (3.0 / (1.0 + df)).ln() + 1.0;
        let expected_t2n = array![
            [0.5 * idf(2.0), 0.0, 0.5 * idf(2.0), 0.0],
            [0.25 * idf(2.0), 0.25 * idf(2.0), 0.0, 0.0],
            [0.25 * idf(3.0), 0.75 * idf(3.0), 0.5 * idf(3.0), 0.0]
        ];
        for (a, b) in t2n.iter().zip(expected_t2n.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let n2t = tfidf(m.view(), Orientation::NeuronsAsTerms);
        // Documents (tags) alive: 3. Row sums: 3, 2, 5. df per neuron: 3, 2, 2, 0.
        let expected_n2t = array![
            [2.0 / 3.0 * idf(3.0), 0.0, 1.0 / 3.0 * idf(2.0), 0.0],
            [0.5 * idf(3.0), 0.5 * idf(2.0), 0.0, 0.0],
            [0.2 * idf(3.0), 0.6 * idf(2.0), 0.2 * idf(2.0), 0.0]
        ];
        for (a, b) in n2t.iter().zip(expected_n2t.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Ubiquitous term is discounted below a rarer one at equal tf.
        assert!(idf(3.0) < 1.0 && idf(3.0) < idf(2.0));
    }

    #[test]
    fn all_zero_input_scores_zero() {
        let m = Array2::<f64>::zeros((2, 3));
        assert!(tfidf(m.view(), Orientation::TagsAsTerms).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_scores_map_to_identity() {
        let s = Array2::from_diag(&array![1.0, 2.0, 3.0]);
        let maps = build_argmax_maps(s.view(), s.view());
        let id: Vec<Option<u32>> = (0..3).map(Some).collect();
        assert_eq!(maps.unique_neuron_for_tag, id);
        assert_eq!(maps.characteristic_tag_for_neuron, id);
        assert_eq!(maps.distinctive_tag_for_neuron, id);
        assert_eq!(maps.representative_neuron_for_tag, id);
        assert!(maps.overlap.shared_unique_neurons.is_empty());
    }

    #[test]
    fn shared_dominant_neuron_is_reported() {
        let s = array![[0.1, 0.9, 0.0], [0.2, 0.8, 0.0]];
        let maps = build_argmax_maps(s.view(), s.view());
        assert_eq!(maps.unique_neuron_for_tag, vec![Some(1), Some(1)]);
        assert_eq!(maps.overlap.shared_unique_neurons.get(&1), Some(&vec![0, 1]));
        assert_eq!(maps.characteristic_tag_for_neuron[2], None);
    }

    #[test]
    fn argmax_matches_brute_force() {
        let s = array![[0.3, 0.3, 0.1], [0.0, 0.0, 0.0], [0.5, 0.2, 0.7]];
        let maps = build_argmax_maps(s.view(), s.view());
        for (t, got) in maps.unique_neuron_for_tag.iter().enumerate() {
            let mut best = None;
            let mut best_v = 0.0;
            for n in 0..3 {
                if s[[t, n]] > best_v {
                    best_v = s[[t, n]];
                    best = Some(n as u32);
                }
            }
            assert_eq!(*got, best);
        }
    }

    #[test]
    fn uniform_row_entropy_and_average_kl() {
        let uniform = Array1::from_elem(8192, 1.0);
        let q = smooth_distribution(uniform.view()).unwrap();
        assert!((entropy_bits(q.view()) - 13.0).abs() < 1e-9);
        let m = array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]];
        let stats = row_selectivity(m.view(), &["a".into(), "b".into()], Side::Tag);
        assert!(stats.rows.iter().all(|r| r.kl_bits.abs() <= 1e-6));
    }

    #[test]
    fn zero_rows_are_excluded() {
        let m = array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]];
        let stats = row_selectivity(m.view(), &["a".into(), "b".into(), "c".into()], Side::Tag);
        assert_eq!(stats.excluded_rows, 1);
        assert_eq!(stats.rows.len(), 2);
        assert!((stats.baseline_entropy_bits - 1.0).abs() < 1e-9);
        for r in &stats.rows {
            assert!(r.kl_bits >= 0.0);
            assert!(r.rel_entropy_decrease <= 1.0);
        }
    }
}
