//! Linear-chain CRF whose labels are backed by several latent states each,
//! with a low-rank factorization of the state transition potentials.
//!
//! A typical pipeline reads a CoNLL corpus, trains with [`training::train`],
//! and decodes with [`ModelParams::decode`].

pub mod audit;
pub mod data;
pub mod error;
pub mod featurizer;
pub mod inference;
pub mod model;
pub mod potentials;
pub mod schema;
pub mod training;

pub use error::{Error, Result};
pub use model::{ModelParams, TrainConfig};
pub use schema::{LabelSchema, Scheme, StateSpace};
