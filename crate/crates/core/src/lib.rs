//! Steerable collaborative filtering with sparse autoencoders.
//!
//! A collaborative-filtering autoencoder (ELSA or MultVAE) is trained on
//! implicit feedback, a sparse autoencoder is fitted to its user embeddings,
//! the sparse neurons are labeled with tags, and recommendations are steered
//! by blending labeled neurons into a user's sparse code.

pub mod adam;
pub mod concept_map;
pub mod container;
pub mod corpus;
pub mod elsa;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod multvae;
pub mod nested;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sae;
pub mod steering;
pub mod synthetic;

pub use error::{Error, Result};
