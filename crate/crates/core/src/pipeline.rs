//! Desk-scale experiment plumbing shared by the CLI and the acceptance suite.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::corpus::{self, HoldoutPair, InteractionMatrix, SplitSpec};
use crate::elsa;
use crate::error::Result;
use crate::multvae::MultVaeConfig;
use crate::nested::Cfae;
use crate::sae::SaeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
    pub target_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_frac: 0.1,
            val_frac: 0.1,
            target_frac: 0.2,
            seed: 0,
        }
    }
}

/// Split corpus with fold-in holdouts for validation and test users.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub split: SplitSpec,
    pub train: InteractionMatrix,
    pub val: InteractionMatrix,
    pub val_holdouts: BTreeMap<u32, HoldoutPair>,
    pub test_holdouts: BTreeMap<u32, HoldoutPair>,
}

pub fn prepare(x: &InteractionMatrix, cfg: &SplitConfig) -> Result<Prepared> {
    let split = corpus::split_strong_generalization(x, cfg.test_frac, cfg.val_frac, cfg.seed)?;
    let val_holdouts = corpus::split_holdout_per_user(x, &split.val, cfg.target_frac, cfg.seed)?;
    let test_holdouts = corpus::split_holdout_per_user(x, &split.test, cfg.target_frac, cfg.seed)?;
    Ok(Prepared {
        train: x.select_users(&split.train),
        val: x.select_users(&split.val),
        split,
        val_holdouts,
        test_holdouts,
    })
}

/// CFAE embeddings of full user histories.
pub fn user_embeddings(cfae: &Cfae, x: &InteractionMatrix) -> Array2<f64> {
    let rows: Vec<&[u32]> = x.rows().iter().map(|r| r.as_slice()).collect();
    cfae.encode_batch(&rows)
}

/// Training schedules sized for a few thousand users. The large-corpus
/// defaults take only a handful of optimizer steps per epoch at this scale.
pub fn desk_elsa_config(seed: u64) -> elsa::TrainConfig {
    elsa::TrainConfig {
        loss: elsa::ElsaLoss::Normalized,
        batch_size: 128,
        max_epochs: 100,
        patience: 10,
        adam: AdamConfig::new(1e-3, 0.9, 0.99),
        seed,
    }
}

pub fn desk_multvae_config(seed: u64) -> MultVaeConfig {
    MultVaeConfig {
        batch_size: 128,
        epochs: 60,
        adam: AdamConfig::new(1e-3, 0.9, 0.99),
        beta_step: 1e-4,
        seed,
        ..MultVaeConfig::default()
    }
}

pub fn desk_sae_config(seed: u64) -> SaeConfig {
    SaeConfig {
        adam: AdamConfig::new(1e-3, 0.9, 0.99),
        batch_size: 128,
        max_epochs: 200,
        patience: 20,
        seed,
        ..SaeConfig::default()
    }
}
