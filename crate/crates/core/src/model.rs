//! The full parameter set of a tagger and its on-disk format.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::conll::Corpus;
use crate::error::{Error, Result};
use crate::featurizer::{FeatureCache, FeaturizerParams, Vocab};
use crate::inference::{viterbi_decode, Decoded, Lattice};
use crate::potentials::{effective_transition_matrix, ConstraintMask, TransitionFactors};
use crate::schema::{allocate_states, LabelSchema, Scheme, StateSpace};

/// Identifies model files written by this crate.
pub const MODEL_FORMAT: &str = "elcrf-model";
pub const FORMAT_VERSION: u32 = 1;

/// Hyperparameters for model construction and SGD training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Embedding rank k of the transition factors.
    pub factor_size: usize,
    /// Learn a dense M×M transition matrix instead of factors.
    pub full_rank: bool,
    /// Total latent states M. `None` allocates three per label.
    pub hidden_states: Option<usize>,
    pub emb_dim: usize,
    pub window: usize,
    pub scheme: Scheme,
    pub normalize_digits: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            lr_decay: 0.05,
            clip_norm: 5.0,
            batch_size: 1,
            dropout_p: 0.5,
            max_epochs: 50,
            patience: 10,
            factor_size: 20,
            full_rank: false,
            hidden_states: None,
            emb_dim: 100,
            window: 2,
            scheme: Scheme::Iob,
            normalize_digits: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Rejects out-of-range values; NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay >= 0.0) {
            return bad(format!("lr decay must be non-negative, got {}", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !self.full_rank && self.factor_size == 0 {
            return bad("factor size must be at least 1".into());
        }
        if self.emb_dim == 0 {
            return bad("embedding dimension must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch: `lr / (1 + decay·epoch)`.
    pub fn epoch_learning_rate(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * epoch as f64)
    }
}

/// Schema, latent state space, transition parameters and featurizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub schema: LabelSchema,
    pub states: StateSpace,
    pub transitions: TransitionFactors,
    pub featurizer: FeaturizerParams,
    mask: ConstraintMask,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: TrainConfig,
    schema: LabelSchema,
    states: StateSpace,
    transitions: TransitionFactors,
    featurizer: FeaturizerParams,
}

impl ModelParams {
    /// Assembles a model, checking that every part agrees on N and M.
    pub fn from_parts(
        config: TrainConfig,
        schema: LabelSchema,
        states: StateSpace,
        transitions: TransitionFactors,
        featurizer: FeaturizerParams,
    ) -> Result<Self> {
        let m = states.num_states();
        if transitions.num_states() != m || featurizer.num_states() != m {
            return Err(Error::Dimension(format!(
                "state space has {m} states, transitions {}, featurizer {}",
                transitions.num_states(),
                featurizer.num_states()
            )));
        }
        if featurizer.weights.ncols() != featurizer.feature_dim() {
            return Err(Error::Dimension("featurizer weights do not match window size".into()));
        }
        let mask = ConstraintMask::from_schema(&schema, &states)?;
        Ok(ModelParams {
            config,
            schema,
            states,
            transitions,
            featurizer,
            mask,
        })
    }

    /// Fresh model for a schema and vocabulary, seeded from `config.seed`.
    pub fn init(config: &TrainConfig, schema: LabelSchema, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let m = config.hidden_states.unwrap_or(3 * schema.len());
        let states = allocate_states(&schema, m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let transitions = if config.full_rank {
            TransitionFactors::init_full_rank(m, &mut rng)
        } else {
            TransitionFactors::init_factorized(m, config.factor_size, &mut rng)
        };
        let featurizer = FeaturizerParams::init(
            vocab,
            m,
            config.emb_dim,
            config.window,
            config.dropout_p,
            &mut rng,
        )?;
        Self::from_parts(config.clone(), schema, states, transitions, featurizer)
    }

    /// Infers schema and vocabulary from a training corpus, then initializes.
    pub fn for_corpus(config: &TrainConfig, train: &Corpus) -> Result<Self> {
        let schema = LabelSchema::from_sequences(train.label_sequences(), config.scheme)?;
        let vocab = Vocab::build(
            train
                .sequences
                .iter()
                .flat_map(|s| s.tokens.iter().map(String::as_str)),
        );
        Self::init(config, schema, vocab)
    }

    pub fn mask(&self) -> &ConstraintMask {
        &self.mask
    }

    pub fn num_states(&self) -> usize {
        self.states.num_states()
    }

    /// The M×M transition log-potentials with constraints applied.
    pub fn transition_matrix(&self) -> Array2<f64> {
        effective_transition_matrix(&self.transitions, &self.mask)
            .expect("model parts were validated on construction")
    }

    /// Builds the lattice for a token sequence against a precomputed
    /// transition matrix.
    pub fn lattice_with<S: AsRef<str>>(
        &self,
        tokens: &[S],
        trans: &Array2<f64>,
        training_mode: bool,
        rng_seed: u64,
    ) -> Result<(Lattice, FeatureCache)> {
        let (mut psi, cache) = self.featurizer.forward(tokens, training_mode, rng_seed)?;
        self.mask.apply_boundaries(&mut psi);
        Ok((Lattice::new(psi, trans.clone())?, cache))
    }

    pub fn lattice<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Lattice> {
        self.lattice_with(tokens, &self.transition_matrix(), false, 0)
            .map(|(l, _)| l)
    }

    fn decode_with<S: AsRef<str>>(&self, tokens: &[S], trans: &Array2<f64>) -> Result<Decoded> {
        let (lattice, _) = self.lattice_with(tokens, trans, false, 0)?;
        let decoded = viterbi_decode(&lattice, &self.states)?;
        if !self.mask.admits(&decoded.states) || !self.schema.is_valid_sequence(&decoded.labels) {
            crate::audit::record_violation();
            return Err(Error::Schema("decoded sequence violates the label constraints".into()));
        }
        Ok(decoded)
    }

    /// MAP latent path for a token sequence.
    pub fn decode_states<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Decoded> {
        self.decode_with(tokens, &self.transition_matrix())
    }

    /// MAP label sequence for a token sequence.
    pub fn decode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        let d = self.decode_states(tokens)?;
        Ok(d.labels.iter().map(|&y| self.schema.label(y).to_string()).collect())
    }

    /// Decodes many sequences on the current rayon pool. Output order follows
    /// input order regardless of the number of workers.
    pub fn decode_all<S: AsRef<str> + Sync>(&self, sequences: &[Vec<S>]) -> Result<Vec<Vec<String>>> {
        let trans = self.transition_matrix();
        sequences
            .par_iter()
            .map(|tokens| {
                let d = self.decode_with(tokens, &trans)?;
                Ok(d.labels.iter().map(|&y| self.schema.label(y).to_string()).collect())
            })
            .collect()
    }

    pub fn decode_corpus(&self, corpus: &Corpus) -> Result<Vec<Vec<String>>> {
        let tokens: Vec<Vec<&str>> = corpus
            .sequences
            .iter()
            .map(|s| s.tokens.iter().map(String::as_str).collect())
            .collect();
        self.decode_all(&tokens)
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: FORMAT_VERSION,
            config: self.config.clone(),
            schema: self.schema.clone(),
            states: self.states.clone(),
            transitions: self.transitions.clone(),
            featurizer: self.featurizer.clone(),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_reader(input).map_err(|e| Error::Model(format!("unreadable model: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => return Err(Error::Model(format!("not a model file (format {other:?})"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::Model(format!(
                    "unsupported model version {other:?}; this build reads version {FORMAT_VERSION}"
                )))
            }
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::Model(format!("malformed model: {e}")))?;
        Self::from_parts(file.config, file.schema, file.states, file.transitions, file.featurizer)
    }

    pub fn save_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f))
    }
}
