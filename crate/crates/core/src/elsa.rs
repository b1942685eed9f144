//! Shallow linear autoencoder with unit-norm item embeddings.
//!
//! The model holds a single matrix `A` (items x r). A user with indicator `x`
//! is encoded as `Aᵀx` and decoded as `A z - x`. Training minimizes the mean
//! per-user squared error `‖x - (x A Aᵀ - x)‖²` with Adam, renormalizing the
//! rows of `A` after every step. A row-normalized variant compares
//! `x/‖x‖` with `x̂/‖x̂‖` instead.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::corpus::InteractionMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// Per-user training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElsaLoss {
    /// `‖x - (x A Aᵀ - x)‖²`.
    #[default]
    Literal,
    /// `‖x/‖x‖ - x̂/‖x̂‖‖²` with `x̂ = x A Aᵀ - x`.
    Normalized,
}

impl ElsaLoss {
    pub fn name(&self) -> &'static str {
        match self {
            ElsaLoss::Literal => "literal",
            ElsaLoss::Normalized => "normalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: ElsaLoss,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: ElsaLoss::Literal,
            batch_size: 1024,
            max_epochs: 25,
            patience: 10,
            adam: AdamConfig::new(3e-4, 0.9, 0.99),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub final_val_loss: f64,
    pub seed: u64,
    pub loss: ElsaLoss,
    /// How per-user losses are combined within a batch.
    pub loss_reduction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElsaModel {
    a: Array2<f64>,
    pub meta: TrainingMeta,
}

impl ElsaModel {
    /// Wraps an embedding matrix, renormalizing its rows.
    pub fn from_matrix(mut a: Array2<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Container("ELSA matrix has non-finite entries".into()));
        }
        normalize_rows(&mut a);
        Ok(Self {
            a,
            meta: TrainingMeta::default(),
        })
    }

    /// Wraps a trained matrix as is. Rows must already be unit norm.
    pub fn from_parts(a: Array2<f64>, meta: TrainingMeta) -> Result<Self> {
        let m = Self { a, meta };
        if m.a.iter().any(|v| !v.is_finite()) || m.max_row_norm_deviation() > 1e-6 {
            return Err(Error::Container("ELSA matrix rows are not unit norm".into()));
        }
        Ok(m)
    }

    /// Random init: uniform in `[-1/sqrt(r), 1/sqrt(r)]`, rows normalized.
    pub fn random(num_items: usize, r: usize, seed: u64) -> Self {
        let mut g = rng::seeded(seed);
        let bound = 1.0 / (r as f64).sqrt();
        let mut a = Array2::from_shape_simple_fn((num_items, r), || {
            rng::uniform(&mut g, -bound, bound)
        });
        normalize_rows(&mut a);
        Self {
            a,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        }
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn num_items(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `Aᵀx`: sum of the embedding rows of the interacted items.
    pub fn encode(&self, items: &[u32]) -> Array1<f64> {
        let mut z = Array1::zeros(self.dim());
        for &i in items {
            z += &self.a.row(i as usize);
        }
        z
    }

    /// `A z - x`.
    pub fn decode(&self, z: ArrayView1<'_, f64>, items: &[u32]) -> Array1<f64> {
        let mut scores = self.a.dot(&z);
        for &i in items {
            scores[i as usize] -= 1.0;
        }
        scores
    }

    pub fn encode_batch(&self, rows: &[&[u32]]) -> Array2<f64> {
        let mut p = Array2::zeros((rows.len(), self.dim()));
        for (mut out, items) in p.axis_iter_mut(Axis(0)).zip(rows) {
            for &i in *items {
                out += &self.a.row(i as usize);
            }
        }
        p
    }

    pub fn max_row_norm_deviation(&self) -> f64 {
        self.a
            .axis_iter(Axis(0))
            .map(|row| (row.dot(&row).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn normalize_rows(a: &mut Array2<f64>) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

fn residual(a: &Array2<f64>, rows: &[&[u32]]) -> (Array2<f64>, Array2<f64>) {
    let mut p = Array2::zeros((rows.len(), a.ncols()));
    for (mut out, items) in p.axis_iter_mut(Axis(0)).zip(rows) {
        for &i in *items {
            out += &a.row(i as usize);
        }
    }
    // R = X A Aᵀ - 2X, the negated residual of x - (x A Aᵀ - x).
    let mut r = p.dot(&a.t());
    for (b, items) in rows.iter().enumerate() {
        for &i in *items {
            r[[b, i as usize]] -= 2.0;
        }
    }
    (p, r)
}

/// Mean per-user loss over a batch.
pub fn loss(a: &Array2<f64>, rows: &[&[u32]]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let (_, r) = residual(a, rows);
    r.iter().map(|v| v * v).sum::<f64>() / rows.len() as f64
}

/// Batch loss and its gradient with respect to `A`.
///
/// With `P = XA` and `R = PAᵀ - 2X` the gradient of `‖R‖²/B` is
/// `(2/B)(Xᵀ(RA) + RᵀP)`.
pub fn loss_and_grad(a: &Array2<f64>, rows: &[&[u32]]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(a.raw_dim());
    if rows.is_empty() {
        return (0.0, grad);
    }
    let (p, r) = residual(a, rows);
    let b = rows.len() as f64;
    let loss = r.iter().map(|v| v * v).sum::<f64>() / b;
    let ra = r.dot(a);
    for (ra_row, items) in ra.axis_iter(Axis(0)).zip(rows) {
        for &i in *items {
            let mut g = grad.row_mut(i as usize);
            g += &ra_row;
        }
    }
    grad += &r.t().dot(&p);
    grad *= 2.0 / b;
    (loss, grad)
}

const NORM_FLOOR: f64 = 1e-12;

/// Mean per-user row-normalized loss and its gradient. Users with an empty
/// history are skipped; a vanishing prediction contributes loss 2 and no
/// gradient.
pub fn normalized_loss_and_grad(a: &Array2<f64>, rows: &[&[u32]]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(a.raw_dim());
    if rows.is_empty() {
        return (0.0, grad);
    }
    let (p, mut g) = residual(a, rows);
    // residual holds x A Aᵀ - 2x; shift back to x̂ = x A Aᵀ - x.
    for (b, items) in rows.iter().enumerate() {
        for &i in *items {
            g[[b, i as usize]] += 1.0;
        }
    }
    let mut total = 0.0;
    for (mut row, items) in g.axis_iter_mut(Axis(0)).zip(rows) {
        if items.is_empty() {
            row.fill(0.0);
            continue;
        }
        let inv_x = 1.0 / (items.len() as f64).sqrt();
        let norm = row.dot(&row).sqrt();
        if norm < NORM_FLOOR {
            total += 2.0;
            row.fill(0.0);
            continue;
        }
        let dot = items.iter().map(|&i| row[i as usize]).sum::<f64>() * inv_x / norm;
        total += 2.0 - 2.0 * dot;
        // d/dx̂ of -2<u, x̂/|x̂|> = -2 (u - <u,v> v) / |x̂|
        row.mapv_inplace(|v| 2.0 * dot * v / (norm * norm));
        for &i in *items {
            row[i as usize] -= 2.0 * inv_x / norm;
        }
    }
    let b = rows.len() as f64;
    let ga = g.dot(a);
    for (ga_row, items) in ga.axis_iter(Axis(0)).zip(rows) {
        for &i in *items {
            let mut out = grad.row_mut(i as usize);
            out += &ga_row;
        }
    }
    grad += &g.t().dot(&p);
    grad /= b;
    (total / b, grad)
}

/// Batch loss and gradient for the chosen objective.
pub fn objective(kind: ElsaLoss, a: &Array2<f64>, rows: &[&[u32]]) -> (f64, Array2<f64>) {
    match kind {
        ElsaLoss::Literal => loss_and_grad(a, rows),
        ElsaLoss::Normalized => normalized_loss_and_grad(a, rows),
    }
}

fn batch_loss(kind: ElsaLoss, a: &Array2<f64>, rows: &[&[u32]]) -> f64 {
    match kind {
        ElsaLoss::Literal => loss(a, rows),
        ElsaLoss::Normalized => normalized_loss_and_grad(a, rows).0,
    }
}

fn full_loss(kind: ElsaLoss, a: &Array2<f64>, x: &InteractionMatrix, batch_size: usize) -> f64 {
    let rows: Vec<&[u32]> = x.rows().iter().map(Vec::as_slice).collect();
    if rows.is_empty() {
        return 0.0;
    }
    let total: f64 = rows
        .chunks(batch_size.max(1))
        .map(|chunk| batch_loss(kind, a, chunk) * chunk.len() as f64)
        .sum();
    total / rows.len() as f64
}

/// Trains `A` with Adam and row projection, early-stopping on validation loss.
/// Returns the checkpoint with the best validation loss.
pub fn train(
    x_train: &InteractionMatrix,
    x_val: &InteractionMatrix,
    r: usize,
    cfg: &TrainConfig,
) -> Result<ElsaModel> {
    cfg.validate()?;
    if r == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    if x_train.num_users() == 0 {
        return Err(Error::EmptyCorpus("ELSA training split is empty".into()));
    }
    let n = x_train.num_items();
    let mut model = ElsaModel::random(n, r, cfg.seed);
    let mut a = model.a.clone();
    let val = if x_val.num_users() > 0 { x_val } else { x_train };
    let initial = full_loss(cfg.loss, &a, val, cfg.batch_size);
    let mut best = (initial, a.clone());
    let mut last = initial;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut adam = Adam::new(n * r, cfg.adam);
    let mut order: Vec<usize> = (0..x_train.num_users()).collect();
    let mut shuffler = rng::derive(cfg.seed, 1);

    for epoch in 0..cfg.max_epochs {
        rng::shuffle(&mut shuffler, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[u32]> = chunk.iter().map(|&u| x_train.row(u)).collect();
            let (batch_loss, grad) = objective(cfg.loss, &a, &rows);
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("batch loss is {batch_loss}"),
                });
            }
            adam.step(
                a.as_slice_mut().expect("standard layout"),
                grad.as_slice().expect("standard layout"),
            );
            normalize_rows(&mut a);
        }
        epochs_run = epoch + 1;
        last = full_loss(cfg.loss, &a, val, cfg.batch_size);
        if !last.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation loss is {last}"),
            });
        }
        log::debug!("elsa epoch {epoch}: val loss {last:.6}");
        if last < best.0 {
            best = (last, a.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }

    model.a = best.1;
    model.meta = TrainingMeta {
        epochs_run,
        initial_val_loss: initial,
        best_val_loss: best.0,
        final_val_loss: last,
        seed: cfg.seed,
        loss: cfg.loss,
        loss_reduction: "mean-over-users".into(),
    };
    Ok(model)
}
