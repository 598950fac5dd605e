//! Corpora, evaluation and experiment drivers.

pub mod conll;
pub mod eval;
pub mod loo;
pub mod synth;
