//! Sparse autoencoders over dense user embeddings.
//!
//! Inputs are standardized per dimension before encoding and de-standardized
//! after decoding. The encoder is `ReLU(W_E (ŷ - b_D) + b_E)`, optionally
//! followed by a top-k selection; the decoder is `W_D c + b_D`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Floor applied to per-dimension standard deviations.
pub const MIN_SCALE: f64 = 1e-8;
/// Norm below which the cosine loss treats a vector as degenerate.
pub const COSINE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum SaeVariant {
    Basic,
    #[serde(rename = "topk")]
    TopK { k: usize },
}

impl SaeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SaeVariant::Basic => "basic",
            SaeVariant::TopK { .. } => "topk",
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            SaeVariant::Basic => None,
            SaeVariant::TopK { k } => Some(*k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    Cosine,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Cosine => "cosine",
        }
    }
}

/// Per-dimension affine standardization fitted on training embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    /// Population mean and standard deviation per column, scale floored at 1e-8.
    pub fn fit(embeddings: ArrayView2<'_, f64>) -> Self {
        let m = embeddings.nrows().max(1) as f64;
        let mean = embeddings.sum_axis(Axis(0)) / m;
        let mut var = Array1::<f64>::zeros(embeddings.ncols());
        for row in embeddings.axis_iter(Axis(0)) {
            let diff = &row - &mean;
            var += &(&diff * &diff);
        }
        let scale = (var / m).mapv(|v| v.sqrt().max(MIN_SCALE));
        Self { mean, scale }
    }

    pub fn standardize(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        (&y - &self.mean) / &self.scale
    }

    pub fn destandardize(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        &y * &self.scale + &self.mean
    }

    pub fn standardize_rows(&self, ys: ArrayView2<'_, f64>) -> Array2<f64> {
        (&ys - &self.mean) / &self.scale
    }
}

/// Non-negative sparse activation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseCode {
    /// Validates strictly increasing indices below `dim` and positive values.
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Dimension("sparse code indices must increase".into()));
            }
        }
        if let Some(&(j, _)) = entries.last() {
            if j as usize >= dim {
                return Err(Error::Dimension(format!("neuron {j} out of range for width {dim}")));
            }
        }
        if entries.iter().any(|&(_, v)| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Dimension("sparse code activations must be positive".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn l0(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim);
        for &(j, v) in &self.entries {
            out[j as usize] = v;
        }
        out
    }
}

/// ReLU followed by optional top-k. Among equal values the lower index wins.
/// Returns `(index, activation)` pairs sorted by index.
pub fn sparsify(pre: ArrayView1<'_, f64>, k: Option<usize>) -> Vec<(u32, f64)> {
    let mut active: Vec<(u32, f64)> = pre
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(j, &v)| (j as u32, v))
        .collect();
    if let Some(k) = k {
        if active.len() > k {
            active.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            active.truncate(k);
            active.sort_unstable_by_key(|e| e.0);
        }
    }
    active
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// d x p
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    /// p x d
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 4] = ["W_E", "b_E", "W_D", "b_D"];

impl SaeParams {
    /// Uniform encoder init in `[-1/sqrt(p), 1/sqrt(p)]`, tied unit-column
    /// decoder, zero biases.
    pub fn random(p: usize, d: usize, seed: u64) -> Self {
        let mut g = rng::seeded(seed);
        let bound = 1.0 / (p as f64).sqrt();
        let w_enc = Array2::from_shape_simple_fn((d, p), || rng::uniform(&mut g, -bound, bound));
        let mut w_dec = w_enc.t().as_standard_layout().into_owned();
        normalize_columns(&mut w_dec);
        Self {
            w_enc,
            b_enc: Array1::zeros(d),
            w_dec,
            b_dec: Array1::zeros(p),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn width(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_enc: Array2::zeros(self.w_enc.raw_dim()),
            b_enc: Array1::zeros(self.b_enc.raw_dim()),
            w_dec: Array2::zeros(self.w_dec.raw_dim()),
            b_dec: Array1::zeros(self.b_dec.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w_enc.as_slice().unwrap(),
            self.b_enc.as_slice().unwrap(),
            self.w_dec.as_slice().unwrap(),
            self.b_dec.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_enc.as_slice_mut().unwrap(),
            self.b_enc.as_slice_mut().unwrap(),
            self.w_dec.as_slice_mut().unwrap(),
            self.b_dec.as_slice_mut().unwrap(),
        ]
    }

    pub fn preactivations(&self, y_std: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w_enc.dot(&(&y_std - &self.b_dec)) + &self.b_enc
    }

    pub fn max_decoder_norm_deviation(&self) -> f64 {
        self.w_dec
            .axis_iter(Axis(1))
            .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn normalize_columns(w: &mut Array2<f64>) {
    for mut col in w.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub l1: f64,
    /// Set when the cosine term hit the zero-norm guard.
    pub degenerate: bool,
}

/// Reconstruction term and its gradient with respect to the reconstruction.
fn recon_term(
    kind: LossKind,
    target: ArrayView1<'_, f64>,
    recon: ArrayView1<'_, f64>,
) -> (f64, Array1<f64>, bool) {
    match kind {
        LossKind::L2 => {
            let diff = &recon - &target;
            (diff.dot(&diff), diff * 2.0, false)
        }
        LossKind::Cosine => {
            let nt = target.dot(&target).sqrt();
            let nr = recon.dot(&recon).sqrt();
            if nt < COSINE_GUARD || nr < COSINE_GUARD {
                return (1.0, Array1::zeros(recon.len()), true);
            }
            let cos = target.dot(&recon) / (nt * nr);
            // d(1 - cos)/dr = -(t / (|t||r|) - cos r / |r|²)
            let grad = &recon * (cos / (nr * nr)) - &target * (1.0 / (nt * nr));
            (1.0 - cos, grad, false)
        }
    }
}

/// Mean per-row loss over a batch of standardized inputs and its gradient.
/// For top-k the gradient flows only through the selected activations.
pub fn batch_loss_and_grad(
    params: &SaeParams,
    variant: SaeVariant,
    kind: LossKind,
    lambda1: f64,
    y_std: ArrayView2<'_, f64>,
) -> (f64, SaeParams) {
    let b = y_std.nrows();
    let centered = &y_std - &params.b_dec;
    let pre = centered.dot(&params.w_enc.t()) + &params.b_enc;
    let mut act = Array2::<f64>::zeros(pre.raw_dim());
    for (mut a, p) in act.axis_iter_mut(Axis(0)).zip(pre.axis_iter(Axis(0))) {
        for (j, v) in sparsify(p, variant.k()) {
            a[j as usize] = v;
        }
    }
    let recon = act.dot(&params.w_dec.t()) + &params.b_dec;

    let mut total = 0.0;
    let mut d_recon = Array2::<f64>::zeros(recon.raw_dim());
    for ((t, r), mut dr) in y_std
        .axis_iter(Axis(0))
        .zip(recon.axis_iter(Axis(0)))
        .zip(d_recon.axis_iter_mut(Axis(0)))
    {
        let (term, grad, _) = recon_term(kind, t, r);
        total += term;
        dr.assign(&grad);
    }
    total += lambda1 * act.sum();
    let scale = 1.0 / b.max(1) as f64;
    d_recon *= scale;

    let mut grads = params.zeros_like();
    grads.w_dec = d_recon.t().dot(&act);
    let mut d_act = d_recon.dot(&params.w_dec);
    ndarray::Zip::from(&mut d_act).and(&act).for_each(|g, &a| {
        *g = if a > 0.0 { *g + lambda1 * scale } else { 0.0 };
    });
    grads.w_enc = d_act.t().dot(&centered);
    grads.b_enc = d_act.sum_axis(Axis(0));
    grads.b_dec = d_recon.sum_axis(Axis(0)) - d_act.dot(&params.w_enc).sum_axis(Axis(0));
    (total * scale, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeConfig {
    pub width_ratio: usize,
    pub variant: SaeVariant,
    pub loss: LossKind,
    pub lambda1: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            width_ratio: 8,
            variant: SaeVariant::TopK { k: 16 },
            loss: LossKind::L2,
            lambda1: 3e-4,
            adam: AdamConfig::new(3e-4, 0.9, 0.99),
            batch_size: 1024,
            max_epochs: 250,
            patience: 50,
            seed: 0,
        }
    }
}

impl SaeConfig {
    /// Slower schedule used for the models behind concept mapping and steering.
    pub fn fine_grained() -> Self {
        Self {
            adam: AdamConfig::new(1e-4, 0.9, 0.99),
            max_epochs: 1000,
            patience: 250,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_ratio == 0 || self.batch_size == 0 {
            return Err(Error::Config("width_ratio and batch_size must be positive".into()));
        }
        if self.variant.k() == Some(0) {
            return Err(Error::Config("top-k needs k >= 1".into()));
        }
        if self.lambda1 < 0.0 || !self.lambda1.is_finite() {
            return Err(Error::Config(format!("lambda1 must be non-negative, got {}", self.lambda1)));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaeMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub dead_fraction: f64,
    pub seed: u64,
    /// Mean L2 norm of the training embeddings.
    #[serde(default)]
    pub embedding_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub params: SaeParams,
    pub variant: SaeVariant,
    pub loss: LossKind,
    pub lambda1: f64,
    pub standardizer: Standardizer,
    pub meta: SaeMeta,
}

impl SaeModel {
    pub fn new(
        params: SaeParams,
        variant: SaeVariant,
        loss: LossKind,
        lambda1: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let p = params.input_dim();
        let d = params.width();
        if params.b_enc.len() != d
            || params.w_dec.dim() != (p, d)
            || params.b_dec.len() != p
            || standardizer.mean.len() != p
            || standardizer.scale.len() != p
        {
            return Err(Error::Dimension(format!(
                "inconsistent SAE tensor shapes for p = {p}, d = {d}"
            )));
        }
        if standardizer.scale.iter().any(|&s| s < MIN_SCALE) {
            return Err(Error::Dimension("standardizer scale below floor".into()));
        }
        Ok(Self {
            params,
            variant,
            loss,
            lambda1,
            standardizer,
            meta: SaeMeta::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn width(&self) -> usize {
        self.params.width()
    }

    pub fn encode_standardized(&self, y_std: ArrayView1<'_, f64>) -> SparseCode {
        let entries = sparsify(self.params.preactivations(y_std).view(), self.variant.k());
        SparseCode {
            dim: self.width(),
            entries,
        }
    }

    pub fn encode(&self, y: ArrayView1<'_, f64>) -> SparseCode {
        self.encode_standardized(self.standardizer.standardize(y).view())
    }

    /// `W_D c + b_D` in standardized space.
    pub fn decode_standardized(&self, c: &SparseCode) -> Array1<f64> {
        let mut out = self.params.b_dec.clone();
        for &(j, v) in &c.entries {
            out.scaled_add(v, &self.params.w_dec.column(j as usize));
        }
        out
    }

    pub fn decode(&self, c: &SparseCode) -> Array1<f64> {
        self.standardizer
            .destandardize(self.decode_standardized(c).view())
    }

    /// Decodes an arbitrary dense code (used for steered codes).
    pub fn decode_dense(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        let std_out = self.params.w_dec.dot(&z) + &self.params.b_dec;
        self.standardizer.destandardize(std_out.view())
    }

    /// Round trip through the SAE in standardized space: `(ŷ, ỹ, code)`.
    pub fn reconstruct_standardized(&self, y: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>, SparseCode) {
        let y_std = self.standardizer.standardize(y);
        let code = self.encode_standardized(y_std.view());
        let recon = self.decode_standardized(&code);
        (y_std, recon, code)
    }

    pub fn loss(&self, y: ArrayView1<'_, f64>) -> LossParts {
        let (y_std, recon, code) = self.reconstruct_standardized(y);
        let (recon_term, _, degenerate) = recon_term(self.loss, y_std.view(), recon.view());
        let l1 = self.lambda1 * code.sum();
        LossParts {
            total: recon_term + l1,
            recon: recon_term,
            l1,
            degenerate,
        }
    }

    /// Fraction of neurons that never fire on the given embeddings.
    pub fn dead_fraction(&self, embeddings: ArrayView2<'_, f64>) -> f64 {
        let mut alive = vec![false; self.width()];
        for row in embeddings.axis_iter(Axis(0)) {
            for &(j, _) in self.encode(row).entries() {
                alive[j as usize] = true;
            }
        }
        alive.iter().filter(|a| !**a).count() as f64 / self.width() as f64
    }
}

fn mean_loss(model: &SaeModel, y_std: &Array2<f64>, batch_size: usize) -> f64 {
    let rows = y_std.nrows();
    let mut total = 0.0;
    let mut start = 0;
    while start < rows {
        let end = (start + batch_size).min(rows);
        let chunk = y_std.slice(ndarray::s![start..end, ..]);
        let (l, _) = batch_loss_and_grad(&model.params, model.variant, model.loss, model.lambda1, chunk);
        total += l * (end - start) as f64;
        start = end;
    }
    total / rows.max(1) as f64
}

/// Trains an SAE on CFAE embeddings (rows). Early stopping monitors the
/// validation embeddings when given, the training embeddings otherwise; the
/// best checkpoint is returned.
pub fn train(train: ArrayView2<'_, f64>, val: Option<ArrayView2<'_, f64>>, cfg: &SaeConfig) -> Result<SaeModel> {
    cfg.validate()?;
    if train.nrows() == 0 {
        return Err(Error::EmptyCorpus("no embeddings to train the SAE on".into()));
    }
    let p = train.ncols();
    let d = cfg.width_ratio * p;
    if d < p {
        log::warn!("SAE width {d} is narrower than its input {p}");
    }
    if let Some(k) = cfg.variant.k() {
        if k > d {
            return Err(Error::Config(format!("k = {k} exceeds SAE width {d}")));
        }
    }
    let standardizer = Standardizer::fit(train);
    let train_std = standardizer.standardize_rows(train);
    let val_std = val.map(|v| standardizer.standardize_rows(v));
    let monitor = val_std.as_ref().unwrap_or(&train_std);

    let mut params = SaeParams::random(p, d, cfg.seed);
    params.b_dec = train_std.sum_axis(Axis(0)) / train_std.nrows() as f64;
    let mut model = SaeModel::new(params, cfg.variant, cfg.loss, cfg.lambda1, standardizer)?;
    let mut optimizers: Vec<Adam> = model
        .params
        .tensors()
        .iter()
        .map(|t| Adam::new(t.len(), cfg.adam))
        .collect();
    let mut order: Vec<usize> = (0..train_std.nrows()).collect();
    let mut shuffler = rng::derive(cfg.seed, 1);
    let mut best = (mean_loss(&model, monitor, cfg.batch_size), 0usize, model.params.clone());
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        rng::shuffle(&mut shuffler, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_std.select(Axis(0), chunk);
            let (loss, grads) =
                batch_loss_and_grad(&model.params, cfg.variant, cfg.loss, cfg.lambda1, batch.view());
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("SAE batch loss is {loss}"),
                });
            }
            for ((opt, p), g) in optimizers
                .iter_mut()
                .zip(model.params.tensors_mut())
                .zip(grads.tensors())
            {
                opt.step(p, g);
            }
            normalize_columns(&mut model.params.w_dec);
        }
        epochs_run = epoch + 1;
        let val_loss = mean_loss(&model, monitor, cfg.batch_size);
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("SAE validation loss is {val_loss}"),
            });
        }
        if val_loss < best.0 {
            best = (val_loss, epoch + 1, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }

    model.params = best.2;
    let dead = match val {
        Some(v) => model.dead_fraction(v),
        None => model.dead_fraction(train),
    };
    model.meta = SaeMeta {
        epochs_run,
        best_epoch: best.1,
        best_val_loss: best.0,
        dead_fraction: dead,
        seed: cfg.seed,
        embedding_norm: train.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / train.nrows() as f64,
    };
    Ok(model)
}
