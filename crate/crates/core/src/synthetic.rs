//! Planted-concept implicit-feedback corpus for desk-scale experiments.
//!
//! Items are split into contiguous concept blocks; a fraction of items also
//! carries a second concept. Each user draws concept weights from a symmetric
//! Dirichlet and samples distinct items from the resulting mixture of
//! concept-conditional item distributions. Each concept is exposed as a tag on
//! the items that carry it.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionMatrix, TagTable};
use crate::error::{Error, Result};
use crate::rng;

pub const CONCEPT_NAMES: [&str; 16] = [
    "action",
    "animation",
    "children",
    "classic",
    "comedy",
    "documentary",
    "drama",
    "fantasy",
    "film noir",
    "horror",
    "love story",
    "musical",
    "mystery",
    "sci-fi",
    "thriller",
    "western",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_concepts: usize,
    pub items_per_concept: usize,
    pub num_users: usize,
    pub interactions_per_user: usize,
    /// Symmetric Dirichlet concentration of user concept weights.
    pub concentration: f64,
    /// Fraction of items carrying a second concept.
    pub overlap: f64,
    /// Log-normal spread of within-concept item popularity.
    pub popularity_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_concepts: 16,
            items_per_concept: 25,
            num_users: 3000,
            interactions_per_user: 40,
            concentration: 0.3,
            overlap: 0.1,
            popularity_sigma: 0.75,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_items(&self) -> usize {
        self.num_concepts * self.items_per_concept
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_concepts == 0
            || self.items_per_concept == 0
            || self.num_users == 0
            || self.interactions_per_user == 0
        {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if self.interactions_per_user > self.num_items() {
            return Err(Error::Config(format!(
                "{} interactions per user exceed the {} available items",
                self.interactions_per_user,
                self.num_items()
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if self.overlap > 0.0 && self.num_concepts < 2 {
            return Err(Error::Config("overlap needs at least two concepts".into()));
        }
        if !(self.concentration > 0.0) || self.popularity_sigma < 0.0 {
            return Err(Error::Config("concentration must be positive and sigma non-negative".into()));
        }
        Ok(())
    }
}

pub fn concept_name(g: usize) -> String {
    CONCEPT_NAMES
        .get(g)
        .map(|s| (*s).to_owned())
        .unwrap_or_else(|| format!("concept {g:02}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub interactions: InteractionMatrix,
    pub tags: TagTable,
    /// Concepts carried by each item (primary first).
    pub item_concepts: Vec<Vec<u32>>,
    pub concept_names: Vec<String>,
    pub titles: Vec<String>,
}

impl SyntheticCorpus {
    /// Items carrying concept `g`, sorted.
    pub fn concept_items(&self, g: u32) -> Vec<u32> {
        self.item_concepts
            .iter()
            .enumerate()
            .filter(|(_, cs)| cs.contains(&g))
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Tag-table index of concept `g`.
    pub fn concept_tag(&self, g: u32) -> Option<u32> {
        self.tags.tag_index(&self.concept_names[g as usize])
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let g_count = spec.num_concepts;
    let n = spec.num_items();
    let mut item_concepts: Vec<Vec<u32>> = (0..n).map(|i| vec![(i / spec.items_per_concept) as u32]).collect();

    let mut layout_rng = rng::derive(spec.seed, 0);
    let n_overlap = (n as f64 * spec.overlap).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut layout_rng, &mut order);
    for &i in &order[..n_overlap] {
        let primary = item_concepts[i][0] as u64;
        let offset = 1 + rng::below(&mut layout_rng, g_count as u64 - 1);
        item_concepts[i].push(((primary + offset) % g_count as u64) as u32);
    }
    let popularity: Vec<f64> = (0..n)
        .map(|_| (spec.popularity_sigma * rng::normal(&mut layout_rng)).exp())
        .collect();

    // Concept-conditional item distributions.
    let mut concept_dist = vec![vec![0.0; n]; g_count];
    for (i, cs) in item_concepts.iter().enumerate() {
        for &g in cs {
            concept_dist[g as usize][i] = popularity[i];
        }
    }
    for dist in &mut concept_dist {
        let s: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|v| *v /= s);
    }

    let gamma = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| Error::Config(format!("invalid concentration: {e}")))?;
    let mut user_rng = rng::derive(spec.seed, 1);
    let mut rows = Vec::with_capacity(spec.num_users);
    let mut weights = vec![0.0; n];
    for _ in 0..spec.num_users {
        let mut theta: Vec<f64> = (0..g_count).map(|_| gamma.sample(&mut user_rng)).collect();
        let s: f64 = theta.iter().sum();
        if s > 0.0 {
            theta.iter_mut().for_each(|t| *t /= s);
        } else {
            theta.fill(1.0 / g_count as f64);
        }
        weights.fill(0.0);
        for (g, &t) in theta.iter().enumerate() {
            if t > 0.0 {
                for (w, &p) in weights.iter_mut().zip(&concept_dist[g]) {
                    *w += t * p;
                }
            }
        }
        rows.push(draw_distinct(&mut user_rng, &mut weights, spec.interactions_per_user));
    }
    let interactions = InteractionMatrix::from_rows(rows, n)?;

    let concept_names: Vec<String> = (0..g_count).map(concept_name).collect();
    let mut counts = BTreeMap::new();
    for (i, cs) in item_concepts.iter().enumerate() {
        for &g in cs {
            counts.insert((concept_names[g as usize].clone(), i as u32), 1u64);
        }
    }
    let tags = TagTable::from_counts(&counts, n, 1)?;
    let mut seen = vec![0usize; g_count];
    let titles = item_concepts
        .iter()
        .map(|cs| {
            let g = cs[0] as usize;
            seen[g] += 1;
            format!("{} #{}", concept_names[g], seen[g])
        })
        .collect();
    Ok(SyntheticCorpus {
        interactions,
        tags,
        item_concepts,
        concept_names,
        titles,
    })
}

/// Sequential weighted sampling without replacement. Once the positive mass is
/// exhausted the remaining picks are uniform over unpicked items.
fn draw_distinct(g: &mut rng::Rng, weights: &mut [f64], count: usize) -> Vec<u32> {
    let mut picked = Vec::with_capacity(count);
    let mut taken = vec![false; weights.len()];
    while picked.len() < count {
        let total: f64 = weights.iter().sum();
        let choice = if total > 1e-300 {
            let mut target = rng::unit(g) * total;
            let mut choice = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    choice = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            choice.expect("positive total mass has a support item")
        } else {
            let free: Vec<usize> = (0..weights.len()).filter(|&i| !taken[i]).collect();
            free[rng::below(g, free.len() as u64) as usize]
        };
        taken[choice] = true;
        weights[choice] = 0.0;
        picked.push(choice as u32);
    }
    picked.sort_unstable();
    picked
}
