//! Conditional maximum-likelihood training.
//!
//! The loss for one sequence is `log Z − log Σ_{z consistent with y} exp E`,
//! the negative log of the latent-marginal posterior. Its gradient with
//! respect to any log-potential is the expected count under the free lattice
//! minus the expected count under the gold-clamped lattice.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::conll::Corpus;
use crate::data::eval::chunk_f1;
use crate::error::{Error, Result};
use crate::featurizer::FeaturizerGrad;
use crate::inference::{forward_log_partition, marginals};
use crate::model::{ModelParams, TrainConfig};
use crate::potentials::{is_impossible, TransitionFactors};

/// Gradients for every parameter tensor of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub transitions: TransitionFactors,
    pub featurizer: FeaturizerGrad,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Gradients {
            transitions: params.transitions.zeros_like(),
            featurizer: FeaturizerGrad::zeros(&params.featurizer),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self
            .transitions
            .tensors_mut()
            .into_iter()
            .zip(other.transitions.tensors())
        {
            *a += b;
        }
        self.featurizer.add_assign(&other.featurizer);
    }

    /// Global L2 norm over all tensors.
    pub fn norm(&self) -> f64 {
        let trans: f64 = self
            .transitions
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum();
        (trans + self.featurizer.squared_norm()).sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.transitions.tensors_mut() {
            *t *= factor;
        }
        self.featurizer.scale(factor);
    }
}

/// Rescales all gradients so their global norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// Plain SGD update `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for (p, g) in params
        .transitions
        .tensors_mut()
        .into_iter()
        .zip(grads.transitions.tensors())
    {
        p.scaled_add(-lr, g);
    }
    params.featurizer.apply_update(&grads.featurizer, lr);
}

/// Dropout setting for a loss evaluation: `None` runs in evaluation mode.
pub type DropoutSeed = Option<u64>;

/// Negative conditional log-likelihood of `gold` in evaluation mode.
pub fn sequence_nll<T: AsRef<str>, L: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[L],
) -> Result<f64> {
    let gold = params.schema.encode(gold)?;
    nll_indexed(params, tokens, &gold, &params.transition_matrix(), None)
}

fn nll_indexed<T: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[usize],
    trans: &Array2<f64>,
    dropout: DropoutSeed,
) -> Result<f64> {
    check_lengths(tokens.len(), gold.len())?;
    let (lattice, _) =
        params.lattice_with(tokens, trans, dropout.is_some(), dropout.unwrap_or(0))?;
    let log_z = forward_log_partition(&lattice);
    if is_impossible(log_z) {
        return Err(Error::InfeasibleDecode);
    }
    let clamped = forward_log_partition(&lattice.clamped(gold, &params.states)?);
    if is_impossible(clamped) {
        return Err(Error::InfeasibleGold);
    }
    Ok(log_z - clamped)
}

fn check_lengths(tokens: usize, gold: usize) -> Result<()> {
    if tokens != gold {
        return Err(Error::Dimension(format!(
            "{tokens} tokens but {gold} gold labels"
        )));
    }
    Ok(())
}

/// Loss and gradients for one sequence in evaluation mode.
pub fn sequence_gradients<T: AsRef<str>, L: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[L],
) -> Result<(f64, Gradients)> {
    let gold = params.schema.encode(gold)?;
    gradients_indexed(params, tokens, &gold, &params.transition_matrix(), None)
}

/// Loss and gradients with an explicit dropout setting.
pub fn sequence_gradients_with<T: AsRef<str>, L: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[L],
    dropout: DropoutSeed,
) -> Result<(f64, Gradients)> {
    let gold = params.schema.encode(gold)?;
    gradients_indexed(params, tokens, &gold, &params.transition_matrix(), dropout)
}

/// Negative log-likelihood with an explicit dropout setting.
pub fn sequence_nll_with<T: AsRef<str>, L: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[L],
    dropout: DropoutSeed,
) -> Result<f64> {
    let gold = params.schema.encode(gold)?;
    nll_indexed(params, tokens, &gold, &params.transition_matrix(), dropout)
}

fn gradients_indexed<T: AsRef<str>>(
    params: &ModelParams,
    tokens: &[T],
    gold: &[usize],
    trans: &Array2<f64>,
    dropout: DropoutSeed,
) -> Result<(f64, Gradients)> {
    check_lengths(tokens.len(), gold.len())?;
    let (lattice, cache) =
        params.lattice_with(tokens, trans, dropout.is_some(), dropout.unwrap_or(0))?;
    let clamped_lattice = lattice.clamped(gold, &params.states)?;
    let free = marginals(&lattice)?;
    let clamped = marginals(&clamped_lattice).map_err(|_| Error::InfeasibleGold)?;

    let grad_psi = &free.node_marginals - &clamped.node_marginals;
    let grad_trans =
        free.expected_transitions(&lattice) - clamped.expected_transitions(&clamped_lattice);
    Ok((
        free.log_z - clamped.log_z,
        Gradients {
            transitions: params.transitions.backprop(grad_trans.view()),
            featurizer: params.featurizer.backward(&cache, grad_psi.view()),
        },
    ))
}

/// Summed loss and gradients over a corpus in evaluation mode.
pub fn corpus_gradients(params: &ModelParams, corpus: &Corpus) -> Result<(f64, Gradients)> {
    let trans = params.transition_matrix();
    let mut total = Gradients::zeros(params);
    let mut loss = 0.0;
    for seq in &corpus.sequences {
        let gold = params.schema.encode(&seq.labels)?;
        let (l, g) = gradients_indexed(params, &seq.tokens, &gold, &trans, None)?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean evaluation-mode NLL over the training set after the epoch.
    pub train_nll: f64,
    /// Overall chunk F1 on the dev set, when one was given.
    pub dev_f1: Option<f64>,
    pub learning_rate: f64,
    /// Examples skipped because their gold labels are infeasible.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Tab-separated log with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tmean_nll\tdev_f1\tlr\tskipped\n");
        for r in &self.epochs {
            let f1 = r.dev_f1.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{:.6}\t{}\n",
                r.epoch, r.train_nll, f1, r.learning_rate, r.skipped
            ));
        }
        out
    }
}

/// Initializes a model from the training data and trains it.
pub fn train(config: &TrainConfig, train_set: &Corpus, dev_set: &Corpus) -> Result<(ModelParams, TrainLog)> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let params = ModelParams::for_corpus(config, train_set)?;
    train_model(params, train_set, dev_set)
}

struct Example {
    tokens: Vec<String>,
    gold: Vec<usize>,
}

/// Trains an initialized model with batch SGD using `params.config`.
///
/// The training order is reshuffled every epoch from a seeded generator and
/// every example draws its own dropout seed from the same stream, so a run is
/// a pure function of the data and the config. With a non-empty dev set the
/// parameters of the best dev-F1 epoch are returned and training stops after
/// `patience` epochs without improvement; otherwise the last parameters are
/// returned.
pub fn train_model(
    mut params: ModelParams,
    train_set: &Corpus,
    dev_set: &Corpus,
) -> Result<(ModelParams, TrainLog)> {
    let config = params.config.clone();
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let examples: Vec<Example> = train_set
        .sequences
        .iter()
        .map(|s| {
            check_lengths(s.tokens.len(), s.labels.len())?;
            Ok(Example {
                tokens: s.tokens.clone(),
                gold: params.schema.encode(&s.labels)?,
            })
        })
        .collect::<Result<_>>()?;
    let dev_gold: Vec<&Vec<String>> = dev_set.sequences.iter().map(|s| &s.labels).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        let lr = config.epoch_learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut skipped = 0;
        for batch in order.chunks(config.batch_size) {
            let trans = params.transition_matrix();
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let seed: u64 = rng.gen();
                let ex = &examples[i];
                let dropout = (config.dropout_p > 0.0).then_some(seed);
                match gradients_indexed(&params, &ex.tokens, &ex.gold, &trans, dropout) {
                    Ok((_, g)) => match acc.as_mut() {
                        Some(a) => a.add_assign(&g),
                        None => acc = Some(g),
                    },
                    Err(Error::InfeasibleGold) => {
                        log::warn!("skipping training sequence {i}: gold labels are infeasible");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some(mut g) = acc {
                clip_gradients(&mut g, config.clip_norm);
                sgd_step(&mut params, &g, lr);
            }
        }

        let train_nll = mean_nll(&params, &examples);
        let dev_f1 = if dev_set.is_empty() {
            None
        } else {
            let pred = params.decode_corpus(dev_set)?;
            Some(chunk_f1(&dev_gold, &pred)?.overall.f1)
        };
        log::info!(
            "epoch {} lr {lr:.5} nll {train_nll:.4} dev f1 {}",
            epoch + 1,
            dev_f1.map_or("-".into(), |f| format!("{f:.2}"))
        );
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_nll,
            dev_f1,
            learning_rate: lr,
            skipped,
        });

        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, params.clone()));
                log.best_epoch = Some(epoch + 1);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        } else {
            log.best_epoch = Some(epoch + 1);
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((params, log))
}

fn mean_nll(params: &ModelParams, examples: &[Example]) -> f64 {
    let trans = params.transition_matrix();
    let losses: Vec<Option<f64>> = examples
        .par_iter()
        .map(|ex| nll_indexed(params, &ex.tokens, &ex.gold, &trans, None).ok())
        .collect();
    let (sum, n) = losses
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conll::Sequence;
    use crate::featurizer::{FeaturizerParams, Vocab};
    use crate::schema::{LabelSchema, Scheme, StateSpace};
    use ndarray::{array, Array1};

    fn zero_model(labels: &[&str], sizes: &[usize]) -> ModelParams {
        let schema = LabelSchema::new(
            labels.iter().map(|s| s.to_string()).collect(),
            vec![1; labels.len()],
            Scheme::Iob,
        )
        .unwrap();
        let states = StateSpace::from_sizes(sizes).unwrap();
        let m = states.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut featurizer =
            FeaturizerParams::init(Vocab::build(["a", "b"]), m, 2, 1, 0.0, &mut rng).unwrap();
        featurizer.weights.fill(0.0);
        let transitions = TransitionFactors::full_rank(Array2::zeros((m, m))).unwrap();
        ModelParams::from_parts(TrainConfig::default(), schema, states, transitions, featurizer).unwrap()
    }

    #[test]
    fn uniform_model_nll() {
        let m = zero_model(&["A", "B", "C"], &[1, 1, 1]);
        let nll = sequence_nll(&m, &["a"], &["B"]).unwrap();
        assert!((nll - 3f64.ln()).abs() < 1e-12);

        let m = zero_model(&["A", "B"], &[2, 1]);
        let nll = sequence_nll(&m, &["a"], &["A"]).unwrap();
        assert!((nll - 1.5f64.ln()).abs() < 1e-12);
        assert!((nll - 0.405465).abs() < 1e-6);
    }

    #[test]
    fn single_label_gradients_vanish() {
        let m = zero_model(&["A"], &[3]);
        let (nll, g) = sequence_gradients(&m, &["a", "b", "a"], &["A", "A", "A"]).unwrap();
        assert!(nll.abs() < 1e-12);
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gold_mass_pushes_gradients_apart() {
        let m = zero_model(&["A", "B"], &[1, 1]);
        let (_, g) = sequence_gradients(&m, &["a", "b"], &["A", "A"]).unwrap();
        let b = &g.featurizer.bias;
        // Summed over positions: d/dpsi(t,0) < 0 and d/dpsi(t,1) > 0.
        assert!(b[0] < 0.0 && b[1] > 0.0);
        assert!((b[0] + b[1]).abs() < 1e-12);
    }

    #[test]
    fn infeasible_gold_is_reported() {
        let m = zero_model(&["O", "B-X", "I-X"], &[1, 1, 1]);
        let err = sequence_nll(&m, &["a", "b"], &["O", "I-X"]).unwrap_err();
        assert!(matches!(err, Error::InfeasibleGold));
        assert!(matches!(
            sequence_gradients(&m, &["a"], &["I-X"]),
            Err(Error::InfeasibleGold)
        ));
        assert!(matches!(sequence_nll(&m, &["a"], &["Q"]), Err(Error::UnknownLabel(_))));
        assert!(sequence_nll(&m, &["a", "b"], &["O"]).is_err());
    }

    fn grads_with_bias(bias: Array1<f64>) -> Gradients {
        let m = zero_model(&["A", "B"], &[1, 1]);
        let mut g = Gradients::zeros(&m);
        g.featurizer.bias = bias;
        g
    }

    #[test]
    fn clipping() {
        let mut g = grads_with_bias(array![3.0, 4.0]);
        assert_eq!(clip_gradients(&mut g, 5.0), 5.0);
        assert_eq!(g.featurizer.bias, array![3.0, 4.0]);

        let mut g = grads_with_bias(array![6.0, 8.0]);
        clip_gradients(&mut g, 5.0);
        assert_eq!(g.featurizer.bias, array![3.0, 4.0]);

        let mut g = grads_with_bias(array![0.0, 0.0]);
        clip_gradients(&mut g, 5.0);
        assert_eq!(g.featurizer.bias, array![0.0, 0.0]);
    }

    fn toy_corpus() -> Corpus {
        let seq = |t: &str, l: &str| {
            Sequence::new(
                t.split(' ').map(String::from).collect(),
                l.split(' ').map(String::from).collect(),
            )
        };
        Corpus::new(vec![
            seq("a b a", "B-X I-X O"),
            seq("b a a", "O B-X O"),
            seq("a a", "B-X B-X"),
        ])
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig {
            max_epochs: 0,
            emb_dim: 3,
            factor_size: 2,
            ..Default::default()
        };
        let (params, log) = train(&cfg, &toy_corpus(), &Corpus::default()).unwrap();
        assert_eq!(params, ModelParams::for_corpus(&cfg, &toy_corpus()).unwrap());
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        assert!(matches!(
            train(&TrainConfig::default(), &Corpus::default(), &Corpus::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn corpus_gradient_is_sum_of_sequence_gradients() {
        let cfg = TrainConfig { emb_dim: 3, factor_size: 2, ..Default::default() };
        let corpus = toy_corpus();
        let m = ModelParams::for_corpus(&cfg, &corpus).unwrap();
        let (loss, total) = corpus_gradients(&m, &corpus).unwrap();
        let mut sum = Gradients::zeros(&m);
        let mut sum_loss = 0.0;
        for s in &corpus.sequences {
            let (l, g) = sequence_gradients(&m, &s.tokens, &s.labels).unwrap();
            sum_loss += l;
            sum.add_assign(&g);
        }
        assert_eq!(loss, sum_loss);
        assert_eq!(total, sum);
    }

    #[test]
    fn log_tsv() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_nll: 1.5,
                dev_f1: Some(50.0),
                learning_rate: 0.01,
                skipped: 0,
            }],
            ..Default::default()
        };
        assert_eq!(
            log.to_tsv(),
            "epoch\tmean_nll\tdev_f1\tlr\tskipped\n1\t1.500000\t50.0000\t0.010000\t0\n"
        );
    }
}
