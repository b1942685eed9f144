//! Variational autoencoder with a multinomial likelihood.
//!
//! Architecture `[n -> 3d -> d]` with tanh hidden layers, separate mean and
//! log-variance heads, and a mirrored decoder ending in a softmax over items.
//! Downstream consumers always use the mean head as the user embedding.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::corpus::InteractionMatrix;
use crate::error::{Error, Result};
use crate::rng;

pub const LOGVAR_CLAMP: f64 = 10.0;

/// Network weights. Layers act on row vectors: `h = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultVaeParams {
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    pub mu_w: Array2<f64>,
    pub mu_b: Array1<f64>,
    pub lv_w: Array2<f64>,
    pub lv_b: Array1<f64>,
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "enc_w1", "enc_b1", "mu_w", "mu_b", "lv_w", "lv_b", "dec_w1", "dec_b1", "out_w", "out_b",
];

impl MultVaeParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn random(num_items: usize, d: usize, seed: u64) -> Self {
        let h = 3 * d;
        let mut g = rng::seeded(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng::uniform(&mut g, -bound, bound))
        };
        let enc_w1 = layer(num_items, h);
        let mu_w = layer(h, d);
        let lv_w = layer(h, d);
        let dec_w1 = layer(d, h);
        let out_w = layer(h, num_items);
        Self {
            enc_w1,
            enc_b1: Array1::zeros(h),
            mu_w,
            mu_b: Array1::zeros(d),
            lv_w,
            lv_b: Array1::zeros(d),
            dec_w1,
            dec_b1: Array1::zeros(h),
            out_w,
            out_b: Array1::zeros(num_items),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enc_w1: Array2::zeros(self.enc_w1.raw_dim()),
            enc_b1: Array1::zeros(self.enc_b1.raw_dim()),
            mu_w: Array2::zeros(self.mu_w.raw_dim()),
            mu_b: Array1::zeros(self.mu_b.raw_dim()),
            lv_w: Array2::zeros(self.lv_w.raw_dim()),
            lv_b: Array1::zeros(self.lv_b.raw_dim()),
            dec_w1: Array2::zeros(self.dec_w1.raw_dim()),
            dec_b1: Array1::zeros(self.dec_b1.raw_dim()),
            out_w: Array2::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(self.out_b.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            self.enc_w1.as_slice().unwrap(),
            self.enc_b1.as_slice().unwrap(),
            self.mu_w.as_slice().unwrap(),
            self.mu_b.as_slice().unwrap(),
            self.lv_w.as_slice().unwrap(),
            self.lv_b.as_slice().unwrap(),
            self.dec_w1.as_slice().unwrap(),
            self.dec_b1.as_slice().unwrap(),
            self.out_w.as_slice().unwrap(),
            self.out_b.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.enc_w1.as_slice_mut().unwrap(),
            self.enc_b1.as_slice_mut().unwrap(),
            self.mu_w.as_slice_mut().unwrap(),
            self.mu_b.as_slice_mut().unwrap(),
            self.lv_w.as_slice_mut().unwrap(),
            self.lv_b.as_slice_mut().unwrap(),
            self.dec_w1.as_slice_mut().unwrap(),
            self.dec_b1.as_slice_mut().unwrap(),
            self.out_w.as_slice_mut().unwrap(),
            self.out_b.as_slice_mut().unwrap(),
        ]
    }

    pub fn num_items(&self) -> usize {
        self.enc_w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu_w.ncols()
    }

    /// Checks that all tensors agree on `n`, `h` and `d`.
    pub fn check_shapes(&self) -> Result<()> {
        let n = self.enc_w1.nrows();
        let h = self.enc_w1.ncols();
        let d = self.mu_w.ncols();
        let ok = self.enc_b1.len() == h
            && self.mu_w.nrows() == h
            && self.mu_b.len() == d
            && self.lv_w.dim() == (h, d)
            && self.lv_b.len() == d
            && self.dec_w1.dim() == (d, h)
            && self.dec_b1.len() == h
            && self.out_w.dim() == (h, n)
            && self.out_b.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("inconsistent MultVAE tensor shapes for n = {n}, d = {d}")))
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultVaeConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub beta_step: f64,
    pub beta_cap: f64,
    /// Probability of keeping an input coordinate during training.
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for MultVaeConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 25,
            adam: AdamConfig::new(1e-3, 0.9, 0.99),
            beta_step: 1e-6,
            beta_cap: 0.2,
            keep_prob: 0.5,
            seed: 0,
        }
    }
}

impl MultVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep_prob must lie in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.beta_step < 0.0 || self.beta_cap < 0.0 {
            return Err(Error::Config("annealing parameters must be non-negative".into()));
        }
        self.adam.validate()
    }

    /// Annealed KL weight after `steps` optimizer steps.
    pub fn beta_at(&self, steps: u64) -> f64 {
        (steps as f64 * self.beta_step).min(self.beta_cap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MultVaeMeta {
    pub epochs_run: usize,
    pub steps: u64,
    pub final_beta: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultVaeModel {
    pub params: MultVaeParams,
    pub beta_step: f64,
    pub beta_cap: f64,
    pub dropout: f64,
    pub meta: MultVaeMeta,
}

fn normalized_input(num_items: usize, items: &[u32]) -> Array1<f64> {
    let mut x = Array1::zeros(num_items);
    if !items.is_empty() {
        let v = 1.0 / (items.len() as f64).sqrt();
        for &i in items {
            x[i as usize] = v;
        }
    }
    x
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e /= s;
    e
}

impl MultVaeModel {
    pub fn from_params(params: MultVaeParams, beta_step: f64, beta_cap: f64, dropout: f64) -> Result<Self> {
        if !params.all_finite() {
            return Err(Error::Container("MultVAE parameters contain non-finite values".into()));
        }
        Ok(Self {
            params,
            beta_step,
            beta_cap,
            dropout,
            meta: MultVaeMeta::default(),
        })
    }

    pub fn num_items(&self) -> usize {
        self.params.num_items()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Mean-head embedding of an L2-normalized indicator. An empty history
    /// encodes the zero vector (bias-only path).
    pub fn encode_mean(&self, items: &[u32]) -> Array1<f64> {
        let p = &self.params;
        let mut h = Array1::from(p.enc_b1.clone());
        if !items.is_empty() {
            let v = 1.0 / (items.len() as f64).sqrt();
            for &i in items {
                h.scaled_add(v, &p.enc_w1.row(i as usize));
            }
        }
        h.mapv_inplace(f64::tanh);
        h.dot(&p.mu_w) + &p.mu_b
    }

    pub fn encode_batch(&self, rows: &[&[u32]]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.dim()));
        for (mut o, items) in out.axis_iter_mut(Axis(0)).zip(rows) {
            o.assign(&self.encode_mean(items));
        }
        out
    }

    pub fn logits(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        let p = &self.params;
        let h = (z.dot(&p.dec_w1) + &p.dec_b1).mapv(f64::tanh);
        h.dot(&p.out_w) + &p.out_b
    }

    /// Item distribution `softmax(out(tanh(dec(z))))`.
    pub fn decode(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        softmax(&self.logits(z))
    }
}

/// `½ Σ (exp(lv) + μ² - 1 - lv)` for one row.
pub fn kl_divergence(mu: ArrayView1<'_, f64>, logvar: ArrayView1<'_, f64>) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// One training batch with all stochastic inputs made explicit.
pub struct Batch<'a> {
    /// Encoder input after normalization and dropout (B x n).
    pub input: &'a Array2<f64>,
    /// Binary targets (B x n).
    pub target: &'a Array2<f64>,
    /// Reparameterization noise (B x d).
    pub noise: &'a Array2<f64>,
    pub beta: f64,
}

/// Mean per-user loss `-Σ x log π + β KL` and its gradient.
pub fn loss_and_grad(p: &MultVaeParams, batch: &Batch<'_>) -> (f64, MultVaeParams) {
    let b = batch.input.nrows() as f64;
    let h1 = (batch.input.dot(&p.enc_w1) + &p.enc_b1).mapv(f64::tanh);
    let mu = h1.dot(&p.mu_w) + &p.mu_b;
    let lv_raw = h1.dot(&p.lv_w) + &p.lv_b;
    let lv = lv_raw.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
    let std = lv.mapv(|v| (0.5 * v).exp());
    let z = &mu + &(&std * batch.noise);
    let h2 = (z.dot(&p.dec_w1) + &p.dec_b1).mapv(f64::tanh);
    let logits = h2.dot(&p.out_w) + &p.out_b;

    let mut nll = 0.0;
    let mut kl = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (row, ((lrow, trow), mut drow)) in logits
        .axis_iter(Axis(0))
        .zip(batch.target.axis_iter(Axis(0)))
        .zip(dlogits.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let max = lrow.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + lrow.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let mass = trow.sum();
        for ((d, &l), &t) in drow.iter_mut().zip(lrow).zip(trow) {
            if t != 0.0 {
                nll -= t * (l - lse);
            }
            *d = ((l - lse).exp() * mass - t) / b;
        }
        kl += kl_divergence(mu.row(row), lv.row(row));
    }
    let loss = (nll + batch.beta * kl) / b;

    let mut g = p.zeros_like();
    g.out_w = h2.t().dot(&dlogits);
    g.out_b = dlogits.sum_axis(Axis(0));
    let dpre2 = dlogits.dot(&p.out_w.t()) * h2.mapv(|h| 1.0 - h * h);
    g.dec_w1 = z.t().dot(&dpre2);
    g.dec_b1 = dpre2.sum_axis(Axis(0));
    let dz = dpre2.dot(&p.dec_w1.t());
    let kl_scale = batch.beta / b;
    let dmu = &dz + &(&mu * kl_scale);
    let mut dlv = Array2::zeros(lv.raw_dim());
    ndarray::Zip::from(&mut dlv)
        .and(&dz)
        .and(batch.noise)
        .and(&std)
        .and(&lv_raw)
        .for_each(|out, &dz, &eps, &s, &raw| {
            *out = if raw.abs() > LOGVAR_CLAMP {
                0.0
            } else {
                dz * eps * 0.5 * s + kl_scale * 0.5 * (s * s - 1.0)
            };
        });
    g.mu_w = h1.t().dot(&dmu);
    g.mu_b = dmu.sum_axis(Axis(0));
    g.lv_w = h1.t().dot(&dlv);
    g.lv_b = dlv.sum_axis(Axis(0));
    let dh1 = (dmu.dot(&p.mu_w.t()) + dlv.dot(&p.lv_w.t())) * h1.mapv(|h| 1.0 - h * h);
    g.enc_w1 = batch.input.t().dot(&dh1);
    g.enc_b1 = dh1.sum_axis(Axis(0));
    (loss, g)
}

fn dense_batch(num_items: usize, rows: &[&[u32]]) -> (Array2<f64>, Array2<f64>) {
    let mut input = Array2::zeros((rows.len(), num_items));
    let mut target = Array2::zeros((rows.len(), num_items));
    for (b, items) in rows.iter().enumerate() {
        input.row_mut(b).assign(&normalized_input(num_items, items));
        for &i in *items {
            target[[b, i as usize]] = 1.0;
        }
    }
    (input, target)
}

fn validation_loss(p: &MultVaeParams, x: &InteractionMatrix, beta: f64, batch_size: usize) -> f64 {
    let rows: Vec<&[u32]> = x.rows().iter().map(Vec::as_slice).collect();
    let mut total = 0.0;
    for chunk in rows.chunks(batch_size.max(1)) {
        let (input, target) = dense_batch(p.num_items(), chunk);
        let noise = Array2::zeros((chunk.len(), p.dim()));
        let batch = Batch {
            input: &input,
            target: &target,
            noise: &noise,
            beta,
        };
        total += loss_and_grad(p, &batch).0 * chunk.len() as f64;
    }
    total / rows.len().max(1) as f64
}

/// Trains for a fixed number of epochs and keeps the best-validation checkpoint.
pub fn train(
    x_train: &InteractionMatrix,
    x_val: &InteractionMatrix,
    d: usize,
    cfg: &MultVaeConfig,
) -> Result<MultVaeModel> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::Config("bottleneck dimension must be at least 1".into()));
    }
    if x_train.num_users() == 0 {
        return Err(Error::EmptyCorpus("MultVAE training split is empty".into()));
    }
    let n = x_train.num_items();
    let mut params = MultVaeParams::random(n, d, cfg.seed);
    let mut optimizers: Vec<Adam> = params
        .tensors()
        .iter()
        .map(|t| Adam::new(t.len(), cfg.adam))
        .collect();
    let val = if x_val.num_users() > 0 { x_val } else { x_train };
    let mut order: Vec<usize> = (0..x_train.num_users()).collect();
    let mut shuffler = rng::derive(cfg.seed, 1);
    let mut noise_rng = rng::derive(cfg.seed, 2);
    let mut steps = 0u64;
    let mut best: Option<(f64, usize, MultVaeParams)> = None;

    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut shuffler, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[u32]> = chunk.iter().map(|&u| x_train.row(u)).collect();
            let (mut input, target) = dense_batch(n, &rows);
            if cfg.keep_prob < 1.0 {
                let scale = 1.0 / cfg.keep_prob;
                for v in input.iter_mut() {
                    let keep = rng::unit(&mut noise_rng) < cfg.keep_prob;
                    *v = if keep { *v * scale } else { 0.0 };
                }
            }
            let noise = Array2::from_shape_simple_fn((rows.len(), d), || rng::normal(&mut noise_rng));
            let batch = Batch {
                input: &input,
                target: &target,
                noise: &noise,
                beta: cfg.beta_at(steps),
            };
            let (loss, grads) = loss_and_grad(&params, &batch);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("batch loss is {loss}"),
                });
            }
            for ((opt, p), g) in optimizers
                .iter_mut()
                .zip(params.tensors_mut())
                .zip(grads.tensors())
            {
                opt.step(p, g);
            }
            steps += 1;
        }
        let val_loss = validation_loss(&params, val, cfg.beta_at(steps), cfg.batch_size);
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation loss is {val_loss}"),
            });
        }
        log::debug!("multvae epoch {epoch}: val loss {val_loss:.6}");
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }

    let (best_val_loss, best_epoch, best_params) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, params),
    };
    let mut model = MultVaeModel::from_params(best_params, cfg.beta_step, cfg.beta_cap, 1.0 - cfg.keep_prob)?;
    model.meta = MultVaeMeta {
        epochs_run: cfg.epochs,
        steps,
        final_beta: cfg.beta_at(steps),
        best_epoch,
        best_val_loss,
        seed: cfg.seed,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultVaeModel {
        MultVaeModel::from_params(MultVaeParams::random(10, 2, 4), 1e-6, 0.2, 0.5).unwrap()
    }

    #[test]
    fn kl_vanishes_at_standard_normal() {
        let mu = Array1::zeros(4);
        let lv = Array1::zeros(4);
        assert_eq!(kl_divergence(mu.view(), lv.view()), 0.0);
    }

    #[test]
    fn empty_history_uses_bias_path() {
        let m = tiny();
        let expected = m.params.enc_b1.mapv(f64::tanh).dot(&m.params.mu_w) + &m.params.mu_b;
        assert_eq!(m.encode_mean(&[]), expected);
        assert!(m.encode_mean(&[]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_matches_layerwise_oracle() {
        let m = tiny();
        let items = [1u32, 3, 8];
        let mut x = Array1::<f64>::zeros(10);
        for &i in &items {
            x[i as usize] = 1.0;
        }
        let x = &x / x.dot(&x).sqrt();
        let p = &m.params;
        let h = (x.dot(&p.enc_w1) + &p.enc_b1).mapv(f64::tanh);
        let oracle = h.dot(&p.mu_w) + &p.mu_b;
        for (a, b) in m.encode_mean(&items).iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_is_a_distribution() {
        let m = tiny();
        for z in [[0.0, 0.0], [3.0, -2.0], [-40.0, 25.0]] {
            let z = Array1::from(z.to_vec());
            let pi = m.decode(z.view());
            assert!((pi.sum() - 1.0).abs() < 1e-9);
            assert!(pi.iter().all(|&v| v > 0.0));
            let logits = m.logits(z.view());
            let argmax = |v: &Array1<f64>| {
                v.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
                    .0
            };
            assert_eq!(argmax(&pi), argmax(&logits));
        }
    }

    #[test]
    fn beta_schedule_is_capped_linear() {
        let cfg = MultVaeConfig {
            beta_step: 0.01,
            beta_cap: 0.2,
            ..MultVaeConfig::default()
        };
        assert_eq!(cfg.beta_at(0), 0.0);
        assert_eq!(cfg.beta_at(10), 10.0 * 0.01);
        assert_eq!(cfg.beta_at(500), 0.2);
    }

    #[test]
    fn zero_noise_training_path_matches_mean_head() {
        let m = tiny();
        let rows: [&[u32]; 2] = [&[0, 4, 5], &[2]];
        let (input, _) = dense_batch(10, &rows);
        let h1 = (input.dot(&m.params.enc_w1) + &m.params.enc_b1).mapv(f64::tanh);
        let mu = h1.dot(&m.params.mu_w) + &m.params.mu_b;
        for (b, items) in rows.iter().enumerate() {
            let e = m.encode_mean(items);
            for (a, c) in e.iter().zip(mu.row(b).iter()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn short_training_run_is_deterministic_and_finite() {
        let rows: Vec<Vec<u32>> = (0..30u32).map(|u| vec![u % 10, (u + 3) % 10, (u * 7) % 10]).collect();
        let x = InteractionMatrix::from_rows(rows, 10).unwrap();
        let cfg = MultVaeConfig {
            batch_size: 8,
            epochs: 3,
            seed: 2,
            ..MultVaeConfig::default()
        };
        let a = train(&x, &x, 2, &cfg).unwrap();
        let b = train(&x, &x, 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.params.all_finite());
        assert_eq!(a.meta.steps, 12);
        assert_eq!(a.meta.final_beta, cfg.beta_at(12));
    }
}
