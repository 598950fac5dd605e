//! Leave-one-document-out cross-validation with merged scoring.

use rayon::prelude::*;

use crate::data::conll::Corpus;
use crate::data::eval::{chunk_f1, ChunkF1Report};
use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::training::train;

#[derive(Debug, Clone, PartialEq)]
pub struct LooOutcome {
    /// One score over the concatenated held-out predictions.
    pub report: ChunkF1Report,
    /// Predicted labels for every sequence of the corpus, in corpus order.
    pub predictions: Vec<Vec<String>>,
    pub folds: usize,
}

/// Trains one model per held-out document and scores all held-out
/// predictions together. Folds train without a dev set and run in parallel.
pub fn loo_cross_validate(config: &TrainConfig, corpus: &Corpus) -> Result<LooOutcome> {
    let docs = corpus.documents();
    if docs.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-out needs at least 2 documents, got {}",
            docs.len()
        )));
    }
    let empty = Corpus::default();
    let fold_predictions: Vec<Vec<Vec<String>>> = docs
        .par_iter()
        .map(|doc| {
            let (model, _) = train(config, &corpus.without(doc.clone()), &empty)?;
            let held_out = Corpus::new(corpus.sequences[doc.clone()].to_vec());
            model.decode_corpus(&held_out)
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<Vec<String>> = fold_predictions.into_iter().flatten().collect();
    let gold: Vec<&Vec<String>> = docs
        .iter()
        .flat_map(|d| corpus.sequences[d.clone()].iter().map(|s| &s.labels))
        .collect();
    let report = chunk_f1(&gold, &predictions)?;
    Ok(LooOutcome {
        report,
        predictions,
        folds: docs.len(),
    })
}
