//! Binary model container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "KNOB" | u32 version | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u8 dtype (0 = f64)
//!             | u32 ndim | u64 dims... | row-major f64 payload
//! u64 metadata length | metadata JSON
//! ```
//!
//! Each model file gets a small JSON sidecar describing it.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use crate::elsa::{ElsaModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::multvae::{MultVaeMeta, MultVaeModel, MultVaeParams};
use crate::nested::Cfae;
use crate::report;
use crate::sae::{LossKind, SaeMeta, SaeModel, SaeParams, SaeVariant, Standardizer};

pub const MAGIC: &[u8; 4] = b"KNOB";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Container(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self {
            name: name.to_owned(),
            shape,
            data,
        })
    }

    fn matrix(name: &str, m: &Array2<f64>) -> Self {
        let data = m.as_standard_layout().iter().copied().collect();
        Self {
            name: name.to_owned(),
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    fn vector(name: &str, v: &Array1<f64>) -> Self {
        Self {
            name: name.to_owned(),
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Array2<f64>> {
        match self.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.data.clone()).expect("shape checked")),
            _ => Err(Error::Container(format!("tensor {} is not a matrix", self.name))),
        }
    }

    fn to_vector(&self) -> Result<Array1<f64>> {
        match self.shape[..] {
            [_] => Ok(Array1::from(self.data.clone())),
            _ => Err(Error::Container(format!("tensor {} is not a vector", self.name))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tensors: Vec<Tensor>,
    pub metadata: Value,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = self.metadata.to_string();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Container("bad magic, not a KNOB container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!(
                "unsupported container version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?
                .to_owned();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Container(format!("tensor {name}: unknown dtype {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Container(format!("tensor {name}: shape {shape:?} exceeds payload")))?;
            let payload = r.take(n * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        let meta_len = r.u64()? as usize;
        let meta = r.take(meta_len)?;
        if r.remaining() != 0 {
            return Err(Error::Container(format!("{} trailing bytes", r.remaining())));
        }
        let metadata = serde_json::from_slice(meta)?;
        Ok(Self { tensors, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Container("truncated container".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Sidecar path for a model file: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_with_sidecar(c: &Container, sidecar: &Value, path: &Path) -> Result<()> {
    c.write(path)?;
    let side = sidecar_path(path);
    fs::write(&side, report::to_stable_json_pretty(sidecar)).map_err(|e| Error::io(&side, e))
}

fn field<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Container(format!("metadata lacks {key}")))?;
    Ok(serde_json::from_value(v.clone())?)
}

fn model_kind(meta: &Value) -> Result<String> {
    field(meta, "model")
}

pub fn elsa_container(m: &ElsaModel) -> Container {
    Container {
        tensors: vec![Tensor::matrix("A", &m.embeddings().to_owned())],
        metadata: json!({
            "model": "elsa",
            "n": m.num_items(),
            "r": m.dim(),
            "training": m.meta,
        }),
    }
}

pub fn save_elsa(m: &ElsaModel, path: &Path) -> Result<()> {
    let side = json!({"model": "elsa", "r": m.dim(), "n": m.num_items(), "seed": m.meta.seed});
    write_with_sidecar(&elsa_container(m), &side, path)
}

fn elsa_from(c: &Container) -> Result<ElsaModel> {
    let a = c.tensor("A")?.to_matrix()?;
    let meta: TrainingMeta = field(&c.metadata, "training")?;
    ElsaModel::from_parts(a, meta)
}

pub fn multvae_container(m: &MultVaeModel) -> Container {
    let p = &m.params;
    let tensors = vec![
        Tensor::matrix("enc_w1", &p.enc_w1),
        Tensor::vector("enc_b1", &p.enc_b1),
        Tensor::matrix("mu_w", &p.mu_w),
        Tensor::vector("mu_b", &p.mu_b),
        Tensor::matrix("lv_w", &p.lv_w),
        Tensor::vector("lv_b", &p.lv_b),
        Tensor::matrix("dec_w1", &p.dec_w1),
        Tensor::vector("dec_b1", &p.dec_b1),
        Tensor::matrix("out_w", &p.out_w),
        Tensor::vector("out_b", &p.out_b),
    ];
    Container {
        tensors,
        metadata: json!({
            "model": "multvae",
            "n": m.num_items(),
            "d": m.dim(),
            "beta_step": m.beta_step,
            "beta_cap": m.beta_cap,
            "dropout": m.dropout,
            "training": m.meta,
        }),
    }
}

pub fn save_multvae(m: &MultVaeModel, path: &Path) -> Result<()> {
    let side = json!({
        "model": "multvae",
        "d": m.dim(),
        "n": m.num_items(),
        "beta_cap": m.beta_cap,
        "dropout": m.dropout,
    });
    write_with_sidecar(&multvae_container(m), &side, path)
}

fn multvae_from(c: &Container) -> Result<MultVaeModel> {
    let params = MultVaeParams {
        enc_w1: c.tensor("enc_w1")?.to_matrix()?,
        enc_b1: c.tensor("enc_b1")?.to_vector()?,
        mu_w: c.tensor("mu_w")?.to_matrix()?,
        mu_b: c.tensor("mu_b")?.to_vector()?,
        lv_w: c.tensor("lv_w")?.to_matrix()?,
        lv_b: c.tensor("lv_b")?.to_vector()?,
        dec_w1: c.tensor("dec_w1")?.to_matrix()?,
        dec_b1: c.tensor("dec_b1")?.to_vector()?,
        out_w: c.tensor("out_w")?.to_matrix()?,
        out_b: c.tensor("out_b")?.to_vector()?,
    };
    params.check_shapes()?;
    let meta = &c.metadata;
    let mut m = MultVaeModel::from_params(
        params,
        field(meta, "beta_step")?,
        field(meta, "beta_cap")?,
        field(meta, "dropout")?,
    )?;
    m.meta = field::<MultVaeMeta>(meta, "training")?;
    Ok(m)
}

pub fn sae_container(m: &SaeModel, parent_model: &str) -> Container {
    let p = &m.params;
    Container {
        tensors: vec![
            Tensor::matrix("W_E", &p.w_enc),
            Tensor::vector("b_E", &p.b_enc),
            Tensor::matrix("W_D", &p.w_dec),
            Tensor::vector("b_D", &p.b_dec),
            Tensor::vector("mu", &m.standardizer.mean),
            Tensor::vector("s", &m.standardizer.scale),
        ],
        metadata: json!({
            "model": "sae",
            "variant": m.variant,
            "loss": m.loss,
            "lambda1": m.lambda1,
            "p": m.input_dim(),
            "d": m.width(),
            "parent_model": parent_model,
            "training": m.meta,
        }),
    }
}

pub fn save_sae(m: &SaeModel, parent_model: &str, path: &Path) -> Result<()> {
    let mut side = json!({
        "model": "sae",
        "variant": m.variant.name(),
        "loss": m.loss.name(),
        "lambda1": m.lambda1,
        "p": m.input_dim(),
        "d": m.width(),
        "parent_model": parent_model,
    });
    if let Some(k) = m.variant.k() {
        side["k"] = json!(k);
    }
    write_with_sidecar(&sae_container(m, parent_model), &side, path)
}

fn sae_from(c: &Container) -> Result<SaeModel> {
    let params = SaeParams {
        w_enc: c.tensor("W_E")?.to_matrix()?,
        b_enc: c.tensor("b_E")?.to_vector()?,
        w_dec: c.tensor("W_D")?.to_matrix()?,
        b_dec: c.tensor("b_D")?.to_vector()?,
    };
    let st = Standardizer {
        mean: c.tensor("mu")?.to_vector()?,
        scale: c.tensor("s")?.to_vector()?,
    };
    let meta = &c.metadata;
    let variant: SaeVariant = field(meta, "variant")?;
    let loss: LossKind = field(meta, "loss")?;
    let mut m = SaeModel::new(params, variant, loss, field(meta, "lambda1")?, st)?;
    m.meta = field::<SaeMeta>(meta, "training")?;
    Ok(m)
}

pub fn load_cfae(path: &Path) -> Result<Cfae> {
    let c = Container::read(path)?;
    match model_kind(&c.metadata)?.as_str() {
        "elsa" => Ok(Cfae::Elsa(elsa_from(&c)?)),
        "multvae" => Ok(Cfae::MultVae(multvae_from(&c)?)),
        other => Err(Error::Container(format!(
            "{}: expected a CFAE, found {other}",
            path.display()
        ))),
    }
}

pub fn save_cfae(m: &Cfae, path: &Path) -> Result<()> {
    match m {
        Cfae::Elsa(e) => save_elsa(e, path),
        Cfae::MultVae(v) => save_multvae(v, path),
    }
}

/// Loads an SAE and the parent path recorded in it.
pub fn load_sae(path: &Path) -> Result<(SaeModel, String)> {
    let c = Container::read(path)?;
    let kind = model_kind(&c.metadata)?;
    if kind != "sae" {
        return Err(Error::Container(format!("{}: expected an SAE, found {kind}", path.display())));
    }
    Ok((sae_from(&c)?, field(&c.metadata, "parent_model")?))
}
