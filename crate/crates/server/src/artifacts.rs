//! On-disk corpus directories shared by all subcommands.
//!
//! ```text
//! interactions.tsv  user_id, item_id, value (1)
//! catalog.tsv       item_id, title; fixes the item index order
//! tags.tsv          item_id, tag (optional)
//! split.json        strong-generalization split
//! holdouts.json     fold-in input/target items of validation and test users
//! truth.json        planted concepts (synthetic corpora only)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use knobs_core::corpus::{self, HoldoutPair, InteractionFormat, InteractionMatrix, SplitSpec, TagTable};
use knobs_core::pipeline::{self, SplitConfig};
use knobs_core::report;

use crate::error::{CliError, CliResult};
use crate::manifest::{io_error, write_text};

pub const INTERACTIONS: &str = "interactions.tsv";
pub const CATALOG: &str = "catalog.tsv";
pub const TAGS: &str = "tags.tsv";
pub const SPLIT: &str = "split.json";
pub const HOLDOUTS: &str = "holdouts.json";
pub const TRUTH: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdouts {
    pub seed: u64,
    pub target_frac: f64,
    pub val: BTreeMap<u32, HoldoutPair>,
    pub test: BTreeMap<u32, HoldoutPair>,
}

/// Planted concepts of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub concept_names: Vec<String>,
    pub item_concepts: Vec<Vec<u32>>,
}

impl Truth {
    /// Items carrying each concept, sorted.
    pub fn concept_items(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.concept_names.len()];
        for (i, cs) in self.item_concepts.iter().enumerate() {
            for &g in cs {
                out[g as usize].push(i as u32);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDir {
    pub x: InteractionMatrix,
    pub titles: Vec<String>,
    pub tags: Option<TagTable>,
    pub split: SplitSpec,
    pub holdouts: Holdouts,
    pub truth: Option<Truth>,
}

impl CorpusDir {
    pub fn train(&self) -> InteractionMatrix {
        self.x.select_users(&self.split.train)
    }

    pub fn val(&self) -> InteractionMatrix {
        self.x.select_users(&self.split.val)
    }

    pub fn tags(&self) -> CliResult<&TagTable> {
        self.tags
            .as_ref()
            .ok_or_else(|| CliError::from(knobs_core::Error::EmptyTagTable { min_count: 1 }))
    }
}

/// Splits `x` and writes a complete corpus directory.
pub fn write_corpus(
    dir: &Path,
    x: &InteractionMatrix,
    titles: &[String],
    tags: Option<&TagTable>,
    split_cfg: &SplitConfig,
    truth: Option<&Truth>,
) -> CliResult<CorpusDir> {
    let prepared = pipeline::prepare(x, split_cfg)?;
    x.write_tsv(&dir.join(INTERACTIONS))?;
    corpus::write_catalog(&dir.join(CATALOG), x.items(), titles)?;
    if let Some(t) = tags {
        t.write_tsv(&dir.join(TAGS), x.items())?;
    }
    write_text(&dir.join(SPLIT), &prepared.split.to_json())?;
    let holdouts = Holdouts {
        seed: split_cfg.seed,
        target_frac: split_cfg.target_frac,
        val: prepared.val_holdouts,
        test: prepared.test_holdouts,
    };
    write_text(&dir.join(HOLDOUTS), &report::to_stable_json(&holdouts))?;
    if let Some(t) = truth {
        write_text(&dir.join(TRUTH), &report::to_stable_json(t))?;
    }
    Ok(CorpusDir {
        x: x.clone(),
        titles: titles.to_vec(),
        tags: tags.cloned(),
        split: prepared.split,
        holdouts,
        truth: truth.cloned(),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::from(knobs_core::Error::Json(e)))
}

pub fn load_corpus(dir: &Path) -> CliResult<CorpusDir> {
    if !dir.is_dir() {
        return Err(io_error(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        ));
    }
    let catalog = dir.join(CATALOG);
    let items = corpus::load_catalog_ids(&catalog)?;
    let titles = corpus::load_catalog(&catalog, &items)?;
    let path = dir.join(INTERACTIONS);
    let records = corpus::load_interactions(&path, InteractionFormat::Implicit)?;
    let x = corpus::matrix_with_items(&records, items, &path)?;
    let tags_path = dir.join(TAGS);
    let tags = if tags_path.exists() {
        Some(corpus::load_tags(&tags_path, &x, 1)?)
    } else {
        None
    };
    let split = SplitSpec::read(&dir.join(SPLIT))?;
    let holdouts: Holdouts = read_json(&dir.join(HOLDOUTS))?;
    let truth_path = dir.join(TRUTH);
    let truth = if truth_path.exists() {
        Some(read_json(&truth_path)?)
    } else {
        None
    };
    let m = x.num_users() as u32;
    if split.train.iter().chain(&split.val).chain(&split.test).any(|&u| u >= m) {
        return Err(knobs_core::Error::Dimension("split references unknown users".into()).into());
    }
    Ok(CorpusDir {
        x,
        titles,
        tags,
        split,
        holdouts,
        truth,
    })
}
