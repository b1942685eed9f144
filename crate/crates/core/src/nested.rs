//! The outer collaborative-filtering autoencoder and the nested
//! CFAE -> SAE -> CFAE scoring path.

use ndarray::{Array1, Array2, ArrayView1};

use crate::elsa::ElsaModel;
use crate::error::{Error, Result};
use crate::multvae::MultVaeModel;
use crate::sae::{SaeModel, SparseCode};
use crate::steering::SteeringDirective;

/// A trained collaborative-filtering autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Cfae {
    Elsa(ElsaModel),
    MultVae(MultVaeModel),
}

impl Cfae {
    pub fn name(&self) -> &'static str {
        match self {
            Cfae::Elsa(_) => "elsa",
            Cfae::MultVae(_) => "multvae",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cfae::Elsa(m) => m.dim(),
            Cfae::MultVae(m) => m.dim(),
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            Cfae::Elsa(m) => m.num_items(),
            Cfae::MultVae(m) => m.num_items(),
        }
    }

    pub fn encode(&self, items: &[u32]) -> Array1<f64> {
        match self {
            Cfae::Elsa(m) => m.encode(items),
            Cfae::MultVae(m) => m.encode_mean(items),
        }
    }

    pub fn encode_batch(&self, rows: &[&[u32]]) -> Array2<f64> {
        match self {
            Cfae::Elsa(m) => m.encode_batch(rows),
            Cfae::MultVae(m) => m.encode_batch(rows),
        }
    }

    /// Item scores from an embedding. ELSA subtracts the input indicator;
    /// MultVAE returns the softmax distribution and ignores `items`.
    pub fn decode(&self, z: ArrayView1<'_, f64>, items: &[u32]) -> Array1<f64> {
        match self {
            Cfae::Elsa(m) => m.decode(z, items),
            Cfae::MultVae(m) => m.decode(z),
        }
    }

    pub fn scores(&self, items: &[u32]) -> Array1<f64> {
        self.decode(self.encode(items).view(), items)
    }

    pub fn check_items(&self, items: &[u32]) -> Result<()> {
        match items.iter().find(|&&i| i as usize >= self.num_items()) {
            Some(i) => Err(Error::Dimension(format!(
                "item {i} out of range for {} items",
                self.num_items()
            ))),
            None => Ok(()),
        }
    }
}

/// Checks that an SAE can be nested inside a CFAE.
pub fn check_compatible(cfae: &Cfae, sae: &SaeModel) -> Result<()> {
    if sae.input_dim() != cfae.dim() {
        return Err(Error::Dimension(format!(
            "SAE input dimension {} does not match {} embedding dimension {}",
            sae.input_dim(),
            cfae.name(),
            cfae.dim()
        )));
    }
    Ok(())
}

/// Sparse code of a user history: `E_s(E_c(x))`.
pub fn user_code(cfae: &Cfae, sae: &SaeModel, items: &[u32]) -> SparseCode {
    sae.encode(cfae.encode(items).view())
}

/// `D_c(D_s(steer(E_s(E_c(x)))))`, degrading to the plain CFAE without an SAE.
pub fn nested_scores(
    cfae: &Cfae,
    sae: Option<&SaeModel>,
    items: &[u32],
    directive: Option<&SteeringDirective>,
) -> Result<Array1<f64>> {
    cfae.check_items(items)?;
    let Some(sae) = sae else {
        if directive.is_some() {
            return Err(Error::DirectiveWithoutSae);
        }
        return Ok(cfae.scores(items));
    };
    check_compatible(cfae, sae)?;
    let code = user_code(cfae, sae, items);
    let code = match directive {
        Some(d) => d.apply(&code)?,
        None => code,
    };
    let y = sae.decode(&code);
    Ok(cfae.decode(y.view(), items))
}
