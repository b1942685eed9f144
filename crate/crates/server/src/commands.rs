//! Subcommand implementations. Each takes a resolved config, writes its
//! artifacts into `out` and finishes with a manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use knobs_core::concept_map::{self, ConceptNeuronMap, ItemInput, MappingKind};
use knobs_core::container;
use knobs_core::corpus::{self, InteractionFormat};
use knobs_core::elsa::{self, ElsaLoss};
use knobs_core::eval::{self, SweepCell};
use knobs_core::multvae::{self, MultVaeConfig};
use knobs_core::nested::Cfae;
use knobs_core::pipeline::{self, SplitConfig};
use knobs_core::report;
use knobs_core::sae::{self, LossKind, SaeConfig, SaeModel, SaeVariant};
use knobs_core::steering;
use knobs_core::synthetic::{self, SyntheticSpec};

use crate::api::{self, Boost, RecommendRequest};
use crate::artifacts::{self, CorpusDir, Truth};
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, write_text, Manifest};
use crate::snapshot::{self, Snapshot, SnapshotPaths};

pub const CFAE_FILE: &str = "cfae.knob";
pub const SAE_FILE: &str = "sae.knob";
pub const MAP_FILE: &str = "concept_map.json";

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_n() -> usize {
    20
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Schedules sized for a few thousand users.
    Desk,
    /// The large-corpus hyperparameters.
    Paper,
    /// Slower SAE schedule for the models behind mapping and steering.
    FineGrained,
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// `user_id\titem_id\tvalue` ratings with a header row.
    pub ratings: PathBuf,
    #[serde(default)]
    pub tags: Option<PathBuf>,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "IngestConfig::default_threshold")]
    pub threshold: f64,
    #[serde(default = "IngestConfig::default_min_user")]
    pub min_user: u64,
    #[serde(default)]
    pub min_item: u64,
    #[serde(default = "IngestConfig::default_tag_min_count")]
    pub tag_min_count: u64,
    #[serde(default = "default_frac")]
    pub test_frac: f64,
    #[serde(default = "default_frac")]
    pub val_frac: f64,
    #[serde(default = "default_target_frac")]
    pub target_frac: f64,
    /// Seeds the split.
    #[serde(default)]
    pub seed: u64,
}

impl IngestConfig {
    fn default_threshold() -> f64 {
        4.0
    }
    fn default_min_user() -> u64 {
        5
    }
    fn default_tag_min_count() -> u64 {
        100
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_frac: self.test_frac,
            val_frac: self.val_frac,
            target_frac: self.target_frac,
            seed: self.seed,
        }
    }
}

fn default_frac() -> f64 {
    0.1
}

fn default_target_frac() -> f64 {
    0.2
}

pub fn ingest(cfg: &IngestConfig) -> CliResult<()> {
    let records = corpus::load_interactions(&cfg.ratings, InteractionFormat::ExplicitRatings)?;
    let x = corpus::binarize_threshold(&records, cfg.threshold);
    let x = corpus::filter_min_activity(&x, cfg.min_item, cfg.min_user)?;
    let tags = match &cfg.tags {
        Some(p) => Some(corpus::load_tags(p, &x, cfg.tag_min_count)?),
        None => None,
    };
    let titles = match &cfg.catalog {
        Some(p) => corpus::load_catalog(p, x.items())?,
        None => x.items().ids().to_vec(),
    };
    log::info!(
        "{} users x {} items, {} interactions, density {:.4}%",
        x.num_users(),
        x.num_items(),
        x.nnz(),
        x.density() * 100.0
    );
    ensure_dir(&cfg.out)?;
    artifacts::write_corpus(&cfg.out, &x, &titles, tags.as_ref(), &cfg.split_config(), None)?;
    let mut m = Manifest::new("ingest", cfg, Some(cfg.seed));
    m.input("ratings", &cfg.ratings)?;
    if let Some(p) = &cfg.tags {
        m.input("tags", p)?;
    }
    if let Some(p) = &cfg.catalog {
        m.input("catalog", p)?;
    }
    m.finish(&cfg.out)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "SynthConfig::default_concepts")]
    pub num_concepts: usize,
    #[serde(default = "SynthConfig::default_items")]
    pub items_per_concept: usize,
    #[serde(default = "SynthConfig::default_users")]
    pub num_users: usize,
    #[serde(default = "SynthConfig::default_interactions")]
    pub interactions_per_user: usize,
    #[serde(default = "SynthConfig::default_concentration")]
    pub concentration: f64,
    #[serde(default = "SynthConfig::default_overlap")]
    pub overlap: f64,
    #[serde(default = "SynthConfig::default_sigma")]
    pub popularity_sigma: f64,
    #[serde(default = "default_frac")]
    pub test_frac: f64,
    #[serde(default = "default_frac")]
    pub val_frac: f64,
    #[serde(default = "default_target_frac")]
    pub target_frac: f64,
    /// Seeds generation and the split.
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    fn default_concepts() -> usize {
        SyntheticSpec::default().num_concepts
    }
    fn default_items() -> usize {
        SyntheticSpec::default().items_per_concept
    }
    fn default_users() -> usize {
        SyntheticSpec::default().num_users
    }
    fn default_interactions() -> usize {
        SyntheticSpec::default().interactions_per_user
    }
    fn default_concentration() -> f64 {
        SyntheticSpec::default().concentration
    }
    fn default_overlap() -> f64 {
        SyntheticSpec::default().overlap
    }
    fn default_sigma() -> f64 {
        SyntheticSpec::default().popularity_sigma
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_frac: self.test_frac,
            val_frac: self.val_frac,
            target_frac: self.target_frac,
            seed: self.seed,
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_concepts: self.num_concepts,
            items_per_concept: self.items_per_concept,
            num_users: self.num_users,
            interactions_per_user: self.interactions_per_user,
            concentration: self.concentration,
            overlap: self.overlap,
            popularity_sigma: self.popularity_sigma,
            seed: self.seed,
        }
    }
}

pub fn synth(cfg: &SynthConfig) -> CliResult<()> {
    let c = synthetic::generate(&cfg.spec())?;
    let truth = Truth {
        concept_names: c.concept_names.clone(),
        item_concepts: c.item_concepts.clone(),
    };
    ensure_dir(&cfg.out)?;
    artifacts::write_corpus(
        &cfg.out,
        &c.interactions,
        &c.titles,
        Some(&c.tags),
        &cfg.split_config(),
        Some(&truth),
    )?;
    Manifest::new("synth", cfg, Some(cfg.seed)).finish(&cfg.out)
}

// ---------------------------------------------------------------- train-cfae

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfaeKind {
    Elsa,
    Multvae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCfaeConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "TrainCfaeConfig::default_model")]
    pub model: CfaeKind,
    #[serde(default = "TrainCfaeConfig::default_dim")]
    pub dim: usize,
    #[serde(default = "TrainCfaeConfig::default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    /// ELSA objective; the preset decides when unset.
    #[serde(default)]
    pub loss: Option<ElsaLoss>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
}

impl TrainCfaeConfig {
    fn default_model() -> CfaeKind {
        CfaeKind::Elsa
    }
    fn default_dim() -> usize {
        64
    }
    fn default_preset() -> Preset {
        Preset::Desk
    }

    pub fn elsa_config(&self) -> CliResult<elsa::TrainConfig> {
        let mut c = match self.preset {
            Preset::Desk => pipeline::desk_elsa_config(self.seed),
            Preset::Paper => elsa::TrainConfig {
                seed: self.seed,
                ..Default::default()
            },
            Preset::FineGrained => return Err(CliError::config("preset fine-grained applies to train-sae only")),
        };
        if let Some(l) = self.loss {
            c.loss = l;
        }
        if let Some(e) = self.epochs {
            c.max_epochs = e;
            c.patience = c.patience.min(e);
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = self.lr {
            c.adam.lr = lr;
        }
        Ok(c)
    }

    pub fn multvae_config(&self) -> CliResult<MultVaeConfig> {
        if self.loss.is_some() {
            return Err(CliError::config("`loss` applies to ELSA only"));
        }
        let mut c = match self.preset {
            Preset::Desk => pipeline::desk_multvae_config(self.seed),
            Preset::Paper => MultVaeConfig {
                seed: self.seed,
                ..Default::default()
            },
            Preset::FineGrained => return Err(CliError::config("preset fine-grained applies to train-sae only")),
        };
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = self.lr {
            c.adam.lr = lr;
        }
        Ok(c)
    }
}

pub fn train_cfae(cfg: &TrainCfaeConfig) -> CliResult<Cfae> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let (train, val) = (corpus.train(), corpus.val());
    let cfae = match cfg.model {
        CfaeKind::Elsa => Cfae::Elsa(elsa::train(&train, &val, cfg.dim, &cfg.elsa_config()?)?),
        CfaeKind::Multvae => Cfae::MultVae(multvae::train(&train, &val, cfg.dim, &cfg.multvae_config()?)?),
    };
    ensure_dir(&cfg.out)?;
    container::save_cfae(&cfae, &cfg.out.join(CFAE_FILE))?;
    let mut m = Manifest::new("train-cfae", cfg, Some(cfg.seed));
    m.input("corpus", &cfg.corpus)?;
    m.finish(&cfg.out)?;
    Ok(cfae)
}

// ---------------------------------------------------------------- train-sae

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Basic,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSaeConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "TrainSaeConfig::default_variant")]
    pub variant: VariantName,
    #[serde(default = "TrainSaeConfig::default_k")]
    pub k: usize,
    #[serde(default = "TrainSaeConfig::default_width_ratio")]
    pub width_ratio: usize,
    #[serde(default = "TrainSaeConfig::default_loss")]
    pub loss: LossKind,
    /// L1 weight; the preset decides when unset.
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default = "TrainSaeConfig::default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
}

impl TrainSaeConfig {
    fn default_variant() -> VariantName {
        VariantName::Topk
    }
    fn default_k() -> usize {
        16
    }
    fn default_width_ratio() -> usize {
        8
    }
    fn default_loss() -> LossKind {
        LossKind::L2
    }
    fn default_preset() -> Preset {
        Preset::Desk
    }

    pub fn sae_config(&self) -> SaeConfig {
        let mut c = match self.preset {
            Preset::Desk => pipeline::desk_sae_config(self.seed),
            Preset::Paper => SaeConfig {
                seed: self.seed,
                ..SaeConfig::default()
            },
            Preset::FineGrained => SaeConfig {
                seed: self.seed,
                ..SaeConfig::fine_grained()
            },
        };
        c.variant = match self.variant {
            VariantName::Basic => SaeVariant::Basic,
            VariantName::Topk => SaeVariant::TopK { k: self.k },
        };
        c.width_ratio = self.width_ratio;
        c.loss = self.loss;
        if let Some(l) = self.lambda1 {
            c.lambda1 = l;
        }
        if let Some(e) = self.epochs {
            c.max_epochs = e;
            c.patience = c.patience.min(e);
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = self.lr {
            c.adam.lr = lr;
        }
        c
    }
}

/// Trains an SAE on the training users' CFAE embeddings, early-stopping on
/// the validation users'.
pub fn fit_sae(cfae: &Cfae, corpus: &CorpusDir, cfg: &SaeConfig) -> CliResult<SaeModel> {
    let train = pipeline::user_embeddings(cfae, &corpus.train());
    let val = pipeline::user_embeddings(cfae, &corpus.val());
    Ok(sae::train(train.view(), Some(val.view()), cfg)?)
}

fn load_cfae_for(corpus: &CorpusDir, path: &Path) -> CliResult<Cfae> {
    let cfae = container::load_cfae(path)?;
    if cfae.num_items() != corpus.x.num_items() {
        return Err(knobs_core::Error::Dimension(format!(
            "{} covers {} items, the corpus has {}",
            path.display(),
            cfae.num_items(),
            corpus.x.num_items()
        ))
        .into());
    }
    Ok(cfae)
}

fn load_sae_for(cfae: &Cfae, path: &Path) -> CliResult<SaeModel> {
    let (sae, _) = container::load_sae(path)?;
    knobs_core::nested::check_compatible(cfae, &sae)?;
    Ok(sae)
}

pub fn train_sae(cfg: &TrainSaeConfig) -> CliResult<SaeModel> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let cfae = load_cfae_for(&corpus, &cfg.cfae)?;
    let sae = fit_sae(&cfae, &corpus, &cfg.sae_config())?;
    ensure_dir(&cfg.out)?;
    container::save_sae(&sae, cfae.name(), &cfg.out.join(SAE_FILE))?;
    let mut m = Manifest::new("train-sae", cfg, Some(cfg.seed));
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    m.finish(&cfg.out)?;
    Ok(sae)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    #[serde(default)]
    pub sae: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "EvalConfig::default_fold")]
    pub fold: Fold,
}

impl EvalConfig {
    fn default_fold() -> Fold {
        Fold::Test
    }
}

fn holdouts(corpus: &CorpusDir, fold: Fold) -> &std::collections::BTreeMap<u32, corpus::HoldoutPair> {
    match fold {
        Fold::Val => &corpus.holdouts.val,
        Fold::Test => &corpus.holdouts.test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub report: eval::MetricsReport,
    pub popularity: eval::RankingEval,
}

pub fn eval_cmd(cfg: &EvalConfig) -> CliResult<EvalOutput> {
    if cfg.n == 0 {
        return Err(CliError::config("n must be positive"));
    }
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let cfae = load_cfae_for(&corpus, &cfg.cfae)?;
    let sae = match &cfg.sae {
        Some(p) => Some(load_sae_for(&cfae, p)?),
        None => None,
    };
    let pairs = holdouts(&corpus, cfg.fold);
    let report = eval::metrics_report(&cfae, sae.as_ref(), pairs, cfg.n)?;
    let popularity = eval::popularity_ranking(&corpus.train().item_counts(), pairs, cfg.n)?;
    let out = EvalOutput { report, popularity };
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("metrics.json"), &report::to_stable_json_pretty(&out))?;
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&out))?;
    let mut m = Manifest::new("eval", cfg, None);
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    if let Some(p) = &cfg.sae {
        m.input("sae", p)?;
    }
    m.finish(&cfg.out)?;
    Ok(out)
}

fn metrics_csv(o: &EvalOutput) -> String {
    let r = &o.report;
    let opt = |v: Option<f64>| v.map(report::fmt_real).unwrap_or_default();
    format!(
        "model,n,recall_at_n,recall_sem,ndcg_at_n,ndcg_sem,users_evaluated,l0_mean,recon_cosine_mean,recovered_recall_pct,recovered_ndcg_pct,popularity_recall_at_n,popularity_ndcg_at_n\n{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.model,
        r.n,
        report::fmt_real(r.recall_at_n.mean),
        report::fmt_real(r.recall_at_n.sem),
        report::fmt_real(r.ndcg_at_n.mean),
        report::fmt_real(r.ndcg_at_n.sem),
        r.users_evaluated,
        opt(r.l0_mean),
        opt(r.recon_cosine_mean),
        report::fmt_real(r.recovered_recall_pct),
        report::fmt_real(r.recovered_ndcg_pct),
        report::fmt_real(o.popularity.recall.mean),
        report::fmt_real(o.popularity.ndcg.mean),
    )
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "SweepConfig::default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    /// TopK cells, one per k.
    #[serde(default = "SweepConfig::default_ks")]
    pub ks: Vec<usize>,
    /// Basic cells, one per L1 weight.
    #[serde(default)]
    pub basic_lambdas: Vec<f64>,
    #[serde(default = "SweepConfig::default_widths")]
    pub width_ratios: Vec<usize>,
    #[serde(default = "SweepConfig::default_losses")]
    pub losses: Vec<LossKind>,
    /// L1 weight of the TopK cells.
    #[serde(default = "SweepConfig::default_lambda")]
    pub lambda1: f64,
}

impl SweepConfig {
    fn default_preset() -> Preset {
        Preset::Desk
    }
    fn default_ks() -> Vec<usize> {
        vec![8, 16, 32, 64]
    }
    fn default_widths() -> Vec<usize> {
        vec![8]
    }
    fn default_losses() -> Vec<LossKind> {
        vec![LossKind::L2]
    }
    fn default_lambda() -> f64 {
        SaeConfig::default().lambda1
    }

    pub fn grid(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &loss in &self.losses {
            for &width_ratio in &self.width_ratios {
                for &k in &self.ks {
                    cells.push(SweepCell {
                        variant: SaeVariant::TopK { k },
                        width_ratio,
                        loss,
                        lambda1: self.lambda1,
                    });
                }
                for &lambda1 in &self.basic_lambdas {
                    cells.push(SweepCell {
                        variant: SaeVariant::Basic,
                        width_ratio,
                        loss,
                        lambda1,
                    });
                }
            }
        }
        cells
    }
}

pub fn sweep(cfg: &SweepConfig) -> CliResult<Vec<eval::SweepOutcome>> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let cfae = load_cfae_for(&corpus, &cfg.cfae)?;
    let base = TrainSaeConfig {
        corpus: cfg.corpus.clone(),
        cfae: cfg.cfae.clone(),
        out: cfg.out.clone(),
        variant: VariantName::Topk,
        k: 16,
        width_ratio: 8,
        loss: LossKind::L2,
        lambda1: None,
        preset: cfg.preset,
        seed: cfg.seed,
        epochs: None,
        batch_size: None,
        lr: None,
    }
    .sae_config();
    let train = pipeline::user_embeddings(&cfae, &corpus.train());
    let val = pipeline::user_embeddings(&cfae, &corpus.val());
    let rows = eval::sparsity_accuracy_sweep(
        &cfae,
        train.view(),
        Some(val.view()),
        &corpus.holdouts.test,
        &base,
        &cfg.grid(),
        cfg.n,
    )?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("sweep.csv"), &eval::sweep_csv(&rows))?;
    write_text(
        &cfg.out.join("sweep_plot.json"),
        &report::to_stable_json_pretty(&eval::sweep_plot_json(&rows)),
    )?;
    let mut m = Manifest::new("sweep", cfg, Some(cfg.seed));
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    m.finish(&cfg.out)?;
    Ok(rows)
}

// ---------------------------------------------------------------- map

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    pub sae: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Tags listed per neuron in the artifact.
    #[serde(default = "MapConfig::default_top")]
    pub top_tags: usize,
    #[serde(default)]
    pub item_input: ItemInput,
}

impl MapConfig {
    fn default_top() -> usize {
        10
    }
}

pub fn map(cfg: &MapConfig) -> CliResult<ConceptNeuronMap> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let tags = corpus.tags()?;
    let cfae = load_cfae_for(&corpus, &cfg.cfae)?;
    let sae = load_sae_for(&cfae, &cfg.sae)?;
    let codes = concept_map::item_codes_with(&cfae, &sae, cfg.item_input);
    let map = ConceptNeuronMap::build(tags, &codes, sae.width());
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join(MAP_FILE), &report::to_stable_json(&map.to_json(cfg.top_tags)))?;
    let sel = concept_map::selectivity(&map);
    write_text(&cfg.out.join("selectivity.csv"), &sel.csv())?;
    write_text(
        &cfg.out.join("selectivity_summary.json"),
        &report::to_stable_json_pretty(&serde_json::json!({
            "tags": {"baseline_entropy_bits": sel.tags.baseline_entropy_bits, "excluded_rows": sel.tags.excluded_rows},
            "neurons": {"baseline_entropy_bits": sel.neurons.baseline_entropy_bits, "excluded_rows": sel.neurons.excluded_rows},
            "inactive_neurons": map.inactive_neurons(),
            "live_neurons": map.live_neurons.len(),
        })),
    )?;
    write_text(&cfg.out.join("overlap.json"), &report::to_stable_json_pretty(&map.maps.overlap))?;
    if let Some(truth) = &corpus.truth {
        let rec = eval::concept_recovery_score(&map, &codes, &truth.concept_names, &truth.concept_items());
        write_text(&cfg.out.join("recovery.json"), &report::to_stable_json_pretty(&rec))?;
    }
    let mut m = Manifest::new("map", cfg, None);
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    m.input("sae", &cfg.sae)?;
    m.finish(&cfg.out)?;
    Ok(map)
}

// ---------------------------------------------------------------- steer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    pub sae: PathBuf,
    pub map: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Explicit history; defaults to the input items of `user`.
    #[serde(default)]
    pub history: Option<Vec<u32>>,
    /// Test user whose fold-in input is steered; defaults to the first one.
    #[serde(default)]
    pub user: Option<u32>,
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub neuron: Option<u32>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "SteerConfig::default_mapping")]
    pub mapping: MappingKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_true")]
    pub mask_seen: bool,
    #[serde(default = "default_true")]
    pub include_baseline: bool,
}

impl SteerConfig {
    fn default_mapping() -> MappingKind {
        MappingKind::Representative
    }
}

fn snapshot_paths(corpus: &Path, cfae: &Path, sae: &Path, map: &Path) -> SnapshotPaths {
    SnapshotPaths {
        cfae: cfae.to_owned(),
        sae: sae.to_owned(),
        map: map.to_owned(),
        corpus: Some(corpus.to_owned()),
    }
}

/// Writes `steer.json`, byte-identical to the `/recommend` response for the
/// same request.
pub fn steer(cfg: &SteerConfig) -> CliResult<String> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let snap = Snapshot::load(&snapshot_paths(&cfg.corpus, &cfg.cfae, &cfg.sae, &cfg.map))?;
    let history = match (&cfg.history, cfg.user) {
        (Some(h), _) => h.clone(),
        (None, Some(u)) => corpus
            .holdouts
            .test
            .get(&u)
            .ok_or_else(|| CliError::config(format!("user {u} is not a test user")))?
            .input_items
            .clone(),
        (None, None) => corpus
            .holdouts
            .test
            .values()
            .next()
            .ok_or_else(|| CliError::config("corpus has no test users"))?
            .input_items
            .clone(),
    };
    let boosts = match (&cfg.tag, cfg.neuron) {
        (None, None) => vec![],
        (tag, neuron) => vec![Boost {
            neuron,
            tag: tag.clone(),
            weight: 1.0,
        }],
    };
    let req = RecommendRequest {
        history,
        boosts,
        alpha: cfg.alpha,
        n: cfg.n,
        mask_seen: cfg.mask_seen,
        mapping: cfg.mapping,
        include_baseline: cfg.include_baseline,
    };
    let body = api::recommend_request(&snap, &req).map_err(|e| CliError {
        code: if e.status == axum::http::StatusCode::UNPROCESSABLE_ENTITY {
            "dimension_mismatch"
        } else {
            "config"
        },
        exit: if e.status == axum::http::StatusCode::UNPROCESSABLE_ENTITY {
            crate::error::EXIT_DIMENSION
        } else {
            crate::error::EXIT_USAGE
        },
        message: e.message,
    })?;
    let body = report::to_stable_json(&body);
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("steer.json"), &body)?;
    let mut m = Manifest::new("steer", cfg, None);
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    m.input("sae", &cfg.sae)?;
    m.input("map", &cfg.map)?;
    m.finish(&cfg.out)?;
    Ok(body)
}

// ---------------------------------------------------------------- sweep-steer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSteerConfig {
    pub corpus: PathBuf,
    pub cfae: PathBuf,
    pub sae: PathBuf,
    pub map: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "SweepSteerConfig::default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "SweepSteerConfig::default_mappings")]
    pub mappings: Vec<MappingKind>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "EvalConfig::default_fold")]
    pub fold: Fold,
}

impl SweepSteerConfig {
    fn default_alphas() -> Vec<f64> {
        steering::DEFAULT_ALPHAS.to_vec()
    }
    fn default_mappings() -> Vec<MappingKind> {
        vec![MappingKind::Representative, MappingKind::Unique]
    }
}

pub fn sweep_steer(cfg: &SweepSteerConfig) -> CliResult<Vec<steering::SweepRow>> {
    let corpus = artifacts::load_corpus(&cfg.corpus)?;
    let tags = corpus.tags()?;
    let cfae = load_cfae_for(&corpus, &cfg.cfae)?;
    let sae = load_sae_for(&cfae, &cfg.sae)?;
    let map = snapshot::load_map(&cfg.map)?;
    let mut rows = Vec::new();
    for &kind in &cfg.mappings {
        rows.extend(steering::steering_sweep(
            &cfae,
            &sae,
            &map,
            tags,
            holdouts(&corpus, cfg.fold),
            &cfg.alphas,
            kind,
            cfg.n,
        )?);
    }
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("steering_sweep.csv"), &steering::sweep_csv(&rows))?;
    let mut m = Manifest::new("sweep-steer", cfg, None);
    m.input("corpus", &cfg.corpus)?;
    m.input("cfae", &cfg.cfae)?;
    m.input("sae", &cfg.sae)?;
    m.input("map", &cfg.map)?;
    m.finish(&cfg.out)?;
    Ok(rows)
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub cfae: PathBuf,
    pub sae: PathBuf,
    pub map: PathBuf,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "ServeConfig::default_bind")]
    pub bind: String,
}

impl ServeConfig {
    fn default_bind() -> String {
        "127.0.0.1:8080".into()
    }
}

pub fn serve(cfg: &ServeConfig) -> CliResult<()> {
    let snap = Snapshot::load(&SnapshotPaths {
        cfae: cfg.cfae.clone(),
        sae: cfg.sae.clone(),
        map: cfg.map.clone(),
        corpus: cfg.corpus.clone(),
    })?;
    api::serve(snap, &cfg.bind)
}
