//! Central finite-difference checks of the analytic gradients on small fixtures.

use ndarray::Array2;
use serde::Serialize;

use crate::elsa::{self, ElsaLoss, ElsaModel};
use crate::multvae::{self, Batch, MultVaeParams};
use crate::rng;
use crate::sae::{self, LossKind, SaeParams, SaeVariant};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: entries below it are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

pub fn rel_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FLOOR)
}

/// Perturbs every coordinate exposed by `coords` and compares the central
/// difference of `loss` with the matching entry of `analytic`.
fn check<P: Clone>(
    name: &str,
    params: &P,
    analytic: &[Vec<f64>],
    coords: impl Fn(&mut P) -> Vec<&mut [f64]>,
    loss: impl Fn(&P) -> f64,
) -> GradCheck {
    let mut worst = 0.0f64;
    let mut entries = 0;
    let sizes: Vec<usize> = analytic.iter().map(|g| g.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for ix in 0..len {
            let mut plus = params.clone();
            coords(&mut plus)[t][ix] += STEP;
            let mut minus = params.clone();
            coords(&mut minus)[t][ix] -= STEP;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_error(fd, analytic[t][ix]));
            entries += 1;
        }
    }
    GradCheck {
        name: name.to_owned(),
        entries,
        max_rel_error: worst,
    }
}

fn random_rows(n: usize, users: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut r = rng::seeded(seed);
    (0..users)
        .map(|_| {
            let mut items: Vec<u32> = (0..n as u32).collect();
            rng::shuffle(&mut r, &mut items);
            let len = 2 + rng::below(&mut r, (n / 2) as u64) as usize;
            let mut row = items[..len].to_vec();
            row.sort_unstable();
            row
        })
        .collect()
}

/// ELSA on 12 items, 4 dimensions, 5 users.
pub fn elsa(kind: ElsaLoss) -> GradCheck {
    let a = ElsaModel::random(12, 4, 3).embeddings().to_owned();
    let rows = random_rows(12, 5, 4);
    let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
    let (_, g) = elsa::objective(kind, &a, &refs);
    check(
        &format!("elsa-{}", kind.name()),
        &a,
        &[g.iter().copied().collect()],
        |a: &mut Array2<f64>| vec![a.as_slice_mut().expect("contiguous")],
        |a| elsa::objective(kind, a, &refs).0,
    )
}

/// MultVAE on 10 items, 3 latent dimensions, 4 users, with frozen
/// reparameterization noise.
pub fn multvae() -> GradCheck {
    let (n, d, users) = (10, 3, 4);
    let params = MultVaeParams::random(n, d, 5);
    let rows = random_rows(n, users, 6);
    let mut input = Array2::zeros((users, n));
    let mut target = Array2::zeros((users, n));
    for (u, row) in rows.iter().enumerate() {
        for &i in row {
            input[[u, i as usize]] = 1.0 / (row.len() as f64).sqrt();
            target[[u, i as usize]] = 1.0;
        }
    }
    let mut r = rng::seeded(7);
    let noise = Array2::from_shape_fn((users, d), |_| rng::normal(&mut r));
    let batch = Batch {
        input: &input,
        target: &target,
        noise: &noise,
        beta: 0.3,
    };
    let (_, g) = multvae::loss_and_grad(&params, &batch);
    check(
        "multvae",
        &params,
        &g.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>(),
        |p: &mut MultVaeParams| p.tensors_mut().into_iter().collect(),
        |p| multvae::loss_and_grad(p, &batch).0,
    )
}

/// SAE with 4 inputs, 12 neurons and a batch of 6; top-k uses k = 3.
pub fn sae(variant: SaeVariant, loss: LossKind) -> GradCheck {
    let (p, d, b) = (4, 12, 6);
    let mut params = SaeParams::random(p, d, 8);
    let mut r = rng::seeded(9);
    params.b_enc.mapv_inplace(|_| rng::uniform(&mut r, -0.1, 0.3));
    params.b_dec.mapv_inplace(|_| rng::uniform(&mut r, -0.2, 0.2));
    let y = Array2::from_shape_fn((b, p), |_| rng::normal(&mut r));
    let lambda1 = 0.05;
    let (_, g) = sae::batch_loss_and_grad(&params, variant, loss, lambda1, y.view());
    check(
        &format!("sae-{}-{}", variant.name(), loss.name()),
        &params,
        &g.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>(),
        |p: &mut SaeParams| p.tensors_mut().into_iter().collect(),
        |p| sae::batch_loss_and_grad(p, variant, loss, lambda1, y.view()).0,
    )
}

/// Every gradient the trainers use.
pub fn all() -> Vec<GradCheck> {
    let mut out = vec![elsa(ElsaLoss::Literal), elsa(ElsaLoss::Normalized), multvae()];
    for variant in [SaeVariant::Basic, SaeVariant::TopK { k: 3 }] {
        for loss in [LossKind::L2, LossKind::Cosine] {
            out.push(sae(variant, loss));
        }
    }
    out
}
