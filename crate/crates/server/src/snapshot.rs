//! The immutable model bundle a server process answers from.

use std::fs;
use std::path::{Path, PathBuf};

use knobs_core::concept_map::{ConceptMapJson, ConceptNeuronMap};
use knobs_core::container;
use knobs_core::nested::{self, Cfae};
use knobs_core::sae::SaeModel;
use knobs_core::Error;

use crate::artifacts;
use crate::error::CliResult;
use crate::manifest::{hash_path, io_error, sha256_hex};

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPaths {
    pub cfae: PathBuf,
    pub sae: PathBuf,
    pub map: PathBuf,
    /// Corpus directory supplying item titles; titles fall back to item indices.
    pub corpus: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Snapshot {
    pub cfae: Cfae,
    pub sae: SaeModel,
    pub map: ConceptNeuronMap,
    pub titles: Vec<String>,
    pub config_hash: String,
}

impl Snapshot {
    pub fn new(
        cfae: Cfae,
        sae: SaeModel,
        map: ConceptNeuronMap,
        titles: Vec<String>,
        config_hash: String,
    ) -> knobs_core::Result<Self> {
        nested::check_compatible(&cfae, &sae)?;
        if map.width != sae.width() {
            return Err(Error::Dimension(format!(
                "concept map width {} does not match SAE width {}",
                map.width,
                sae.width()
            )));
        }
        if titles.len() != cfae.num_items() {
            return Err(Error::Dimension(format!(
                "catalog has {} titles for {} items",
                titles.len(),
                cfae.num_items()
            )));
        }
        Ok(Self {
            cfae,
            sae,
            map,
            titles,
            config_hash,
        })
    }

    pub fn load(paths: &SnapshotPaths) -> CliResult<Self> {
        let cfae = container::load_cfae(&paths.cfae)?;
        let (sae, _) = container::load_sae(&paths.sae)?;
        let map = load_map(&paths.map)?;
        let mut digest = format!(
            "cfae:{}\nsae:{}\nmap:{}\n",
            hash_path(&paths.cfae)?,
            hash_path(&paths.sae)?,
            hash_path(&paths.map)?
        );
        let titles = match &paths.corpus {
            Some(dir) => {
                let catalog = dir.join(artifacts::CATALOG);
                digest.push_str(&format!("catalog:{}\n", hash_path(&catalog)?));
                let ids = knobs_core::corpus::load_catalog_ids(&catalog)?;
                knobs_core::corpus::load_catalog(&catalog, &ids)?
            }
            None => (0..cfae.num_items()).map(|i| i.to_string()).collect(),
        };
        Ok(Self::new(cfae, sae, map, titles, sha256_hex(digest.as_bytes()))?)
    }

    pub fn d_sparse(&self) -> usize {
        self.sae.width()
    }
}

pub fn load_map(path: &Path) -> CliResult<ConceptNeuronMap> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let json: ConceptMapJson = serde_json::from_str(&text).map_err(Error::Json)?;
    Ok(ConceptNeuronMap::from_json(&json)?)
}
