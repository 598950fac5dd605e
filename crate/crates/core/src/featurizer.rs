//! Local log-potentials from tokens.
//!
//! The default featurizer concatenates the embeddings of a `2w+1` token
//! window around each position and applies an affine map onto the M latent
//! states. Positions outside the sequence read a dedicated padding row and
//! out-of-vocabulary tokens share one trained unknown row.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::LocalPotentials;

/// Embedding row read for window positions outside the sequence.
pub const PAD_ROW: usize = 0;
/// Embedding row shared by all unknown tokens.
pub const UNK_ROW: usize = 1;
const RESERVED_ROWS: usize = 2;

/// Replaces every ASCII decimal digit with `0`.
pub fn normalize_digits(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// Token → embedding-row map. Rows 0 and 1 are the padding and unknown rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + RESERVED_ROWS))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Collects the distinct tokens in sorted order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut set: Vec<String> = tokens
            .into_iter()
            .map(str::to_string)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        set.shrink_to_fit();
        Vocab::from(set)
    }

    /// Number of embedding rows, including the two reserved rows.
    pub fn num_rows(&self) -> usize {
        self.tokens.len() + RESERVED_ROWS
    }

    pub fn row(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ROW)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Trainable parameters of the window featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerParams {
    pub vocab: Vocab,
    /// `vocab.num_rows() × d_emb`.
    pub embeddings: Array2<f64>,
    /// Half-width `w`; each position sees `2w+1` tokens.
    pub window: usize,
    /// `M × (2w+1)·d_emb`.
    pub weights: Array2<f64>,
    /// Length M.
    pub bias: Array1<f64>,
    pub dropout_p: f64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    rows: Array2<usize>,
    features: Array2<f64>,
    dropout_scale: Option<Array2<f64>>,
}

impl FeatureCache {
    /// The T×d feature vectors after dropout.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

/// Gradient of a scalar loss with respect to the featurizer parameters.
/// Embedding gradients are sparse: only rows touched by the sequence appear.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub embeddings: BTreeMap<usize, Array1<f64>>,
}

impl FeaturizerGrad {
    pub fn zeros(params: &FeaturizerParams) -> Self {
        FeaturizerGrad {
            weights: Array2::zeros(params.weights.raw_dim()),
            bias: Array1::zeros(params.bias.raw_dim()),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn add_assign(&mut self, other: &FeaturizerGrad) {
        self.weights += &other.weights;
        self.bias += &other.bias;
        for (&row, g) in &other.embeddings {
            match self.embeddings.get_mut(&row) {
                Some(acc) => *acc += g,
                None => {
                    self.embeddings.insert(row, g.clone());
                }
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        let sq = |x: &f64| x * x;
        self.weights.iter().map(sq).sum::<f64>()
            + self.bias.iter().map(sq).sum::<f64>()
            + self
                .embeddings
                .values()
                .flat_map(|r| r.iter())
                .map(sq)
                .sum::<f64>()
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.bias *= factor;
        for g in self.embeddings.values_mut() {
            *g *= factor;
        }
    }
}

impl FeaturizerParams {
    /// Random initialization. Embedding rows are uniform on
    /// `[-0.5/d_emb, 0.5/d_emb]`, weights use a Glorot-uniform bound and the
    /// bias starts at zero.
    pub fn init<R: Rng>(
        vocab: Vocab,
        num_states: usize,
        emb_dim: usize,
        window: usize,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if emb_dim == 0 || num_states == 0 {
            return Err(Error::Config(
                "embedding dimension and state count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout {dropout_p} outside [0, 1)")));
        }
        let e_bound = 0.5 / emb_dim as f64;
        let embeddings =
            Array2::from_shape_fn((vocab.num_rows(), emb_dim), |_| rng.gen_range(-e_bound..=e_bound));
        let in_dim = (2 * window + 1) * emb_dim;
        let w_bound = (6.0 / (in_dim + num_states) as f64).sqrt();
        let weights =
            Array2::from_shape_fn((num_states, in_dim), |_| rng.gen_range(-w_bound..=w_bound));
        Ok(FeaturizerParams {
            vocab,
            embeddings,
            window,
            weights,
            bias: Array1::zeros(num_states),
            dropout_p,
        })
    }

    pub fn emb_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Dimension of the concatenated window feature, `(2w+1)·d_emb`.
    pub fn feature_dim(&self) -> usize {
        (2 * self.window + 1) * self.emb_dim()
    }

    pub fn num_states(&self) -> usize {
        self.bias.len()
    }

    fn window_rows<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<usize> {
        let t_len = tokens.len();
        let w = self.window as isize;
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.row(t.as_ref())).collect();
        Array2::from_shape_fn((t_len, 2 * self.window + 1), |(t, slot)| {
            let pos = t as isize + slot as isize - w;
            if pos < 0 || pos >= t_len as isize {
                PAD_ROW
            } else {
                ids[pos as usize]
            }
        })
    }

    /// Forward pass returning the T×M local scores plus what backprop needs.
    pub fn forward<S: AsRef<str>>(
        &self,
        tokens: &[S],
        training_mode: bool,
        rng_seed: u64,
    ) -> Result<(LocalPotentials, FeatureCache)> {
        if tokens.is_empty() {
            return Err(Error::Dimension("cannot featurize an empty sequence".into()));
        }
        let d = self.emb_dim();
        let rows = self.window_rows(tokens);
        let t_len = tokens.len();
        let mut features = Array2::zeros((t_len, self.feature_dim()));
        for t in 0..t_len {
            for (slot, &row) in rows.row(t).iter().enumerate() {
                features
                    .slice_mut(s![t, slot * d..(slot + 1) * d])
                    .assign(&self.embeddings.row(row));
            }
        }
        let dropout_scale = if training_mode && self.dropout_p > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let keep = 1.0 - self.dropout_p;
            let scale = Array2::from_shape_fn(features.raw_dim(), |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            features *= &scale;
            Some(scale)
        } else {
            None
        };
        let mut psi = features.dot(&self.weights.t());
        psi += &self.bias;
        let psi = LocalPotentials::new(psi)?;
        Ok((
            psi,
            FeatureCache {
                rows,
                features,
                dropout_scale,
            },
        ))
    }

    /// Backpropagates `d loss / d psi` (T×M) into parameter gradients.
    pub fn backward(&self, cache: &FeatureCache, grad_psi: ArrayView2<f64>) -> FeaturizerGrad {
        let d = self.emb_dim();
        let weights = grad_psi.t().dot(&cache.features);
        let bias = grad_psi.sum_axis(Axis(0));
        let mut grad_features = grad_psi.dot(&self.weights);
        if let Some(scale) = &cache.dropout_scale {
            grad_features *= scale;
        }
        let mut embeddings: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
        for (t, row_ids) in cache.rows.outer_iter().enumerate() {
            for (slot, &row) in row_ids.iter().enumerate() {
                let g = grad_features.slice(s![t, slot * d..(slot + 1) * d]);
                embeddings
                    .entry(row)
                    .and_modify(|acc| *acc += &g)
                    .or_insert_with(|| g.to_owned());
            }
        }
        FeaturizerGrad {
            weights,
            bias,
            embeddings,
        }
    }

    pub fn apply_update(&mut self, grad: &FeaturizerGrad, lr: f64) {
        self.weights.scaled_add(-lr, &grad.weights);
        self.bias.scaled_add(-lr, &grad.bias);
        for (&row, g) in &grad.embeddings {
            self.embeddings.row_mut(row).scaled_add(-lr, g);
        }
    }
}

/// Local log-potentials for a token sequence. With `training_mode` set,
/// inverted dropout is applied to the window embeddings using a generator
/// seeded from `rng_seed`.
pub fn featurize<S: AsRef<str>>(
    tokens: &[S],
    params: &FeaturizerParams,
    training_mode: bool,
    rng_seed: u64,
) -> Result<LocalPotentials> {
    params
        .forward(tokens, training_mode, rng_seed)
        .map(|(psi, _)| psi)
}

/// Overwrites embedding rows from a plain-text vector file (`token v1 … vd`
/// per line, no header). Returns how many vocabulary tokens were matched.
pub fn load_pretrained_embeddings<R: BufRead>(
    source: R,
    params: &mut FeaturizerParams,
) -> Result<usize> {
    let d = params.emb_dim();
    let mut matched = 0;
    let mut row_buf = Vec::with_capacity(d);
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        row_buf.clear();
        for f in fields {
            row_buf.push(f.parse::<f64>().map_err(|_| Error::Format {
                line: lineno + 1,
                message: format!("bad number {f:?}"),
            })?);
        }
        if row_buf.len() != d {
            return Err(Error::Format {
                line: lineno + 1,
                message: format!("expected {d} values for {token:?}, found {}", row_buf.len()),
            });
        }
        if let Some(row) = params.vocab.get(token) {
            params
                .embeddings
                .row_mut(row)
                .assign(&Array1::from(row_buf.clone()));
            matched += 1;
        }
    }
    Ok(matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(dropout: f64) -> FeaturizerParams {
        let vocab = Vocab::build(["the", "cat", "sat"]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        FeaturizerParams::init(vocab, 3, 4, 1, dropout, &mut rng).unwrap()
    }

    #[test]
    fn digits() {
        assert_eq!(normalize_digits("pages 12-34"), "pages 00-00");
        assert_eq!(normalize_digits("2018"), "0000");
        assert_eq!(normalize_digits("et al."), "et al.");
    }

    #[test]
    fn vocab_rows() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.tokens(), ["a", "b"]);
        assert_eq!(v.row("a"), 2);
        assert_eq!(v.row("zzz"), UNK_ROW);
        assert_eq!(v.num_rows(), 4);
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut p = params(0.0);
        p.weights.fill(0.0);
        p.bias = array![1.0, 2.0, 3.0];
        let psi = featurize(&["the", "dog", "sat"], &p, false, 0).unwrap();
        for row in psi.scores().outer_iter() {
            assert_eq!(row, array![1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let p = params(0.5);
        let a = featurize(&["the", "cat"], &p, false, 1).unwrap();
        let b = featurize(&["the", "cat"], &p, false, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dropout_matches_eval() {
        let p = params(0.0);
        let a = featurize(&["the", "cat", "sat"], &p, true, 9).unwrap();
        let b = featurize(&["the", "cat", "sat"], &p, false, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_is_seeded() {
        let p = params(0.5);
        let a = featurize(&["the", "cat", "sat"], &p, true, 17).unwrap();
        let b = featurize(&["the", "cat", "sat"], &p, true, 17).unwrap();
        let c = featurize(&["the", "cat", "sat"], &p, true, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn doubling_weights_doubles_scores() {
        let mut p = params(0.0);
        let base = featurize(&["the", "cat", "sat"], &p, false, 0).unwrap();
        p.weights *= 2.0;
        let doubled = featurize(&["the", "cat", "sat"], &p, false, 0).unwrap();
        assert_eq!(doubled.scores(), &(base.scores() * 2.0));

        p.weights /= 2.0;
        p.bias = array![0.5, -1.0, 2.0];
        let base = featurize(&["cat", "sat"], &p, false, 0).unwrap();
        p.weights *= 2.0;
        let doubled = featurize(&["cat", "sat"], &p, false, 0).unwrap();
        let expected = base.scores() * 2.0 - &p.bias;
        for (x, y) in doubled.scores().iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn padding_and_unknown_rows() {
        let p = params(0.0);
        let (_, cache) = p.forward(&["cat", "zebra"], false, 0).unwrap();
        let rows = &cache.rows;
        assert_eq!(rows.row(0).to_vec(), [PAD_ROW, p.vocab.row("cat"), UNK_ROW]);
        assert_eq!(rows.row(1).to_vec(), [p.vocab.row("cat"), UNK_ROW, PAD_ROW]);
        assert_eq!(p.feature_dim(), 12);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = params(0.0);
        assert!(featurize::<&str>(&[], &p, false, 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = params(0.3);
        let tokens = ["the", "cat", "zebra", "sat"];
        let seed = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let coef = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let loss = |p: &FeaturizerParams| -> f64 {
            let psi = featurize(&tokens, p, true, seed).unwrap();
            (psi.scores() * &coef).sum()
        };
        let (_, cache) = p.forward(&tokens, true, seed).unwrap();
        let grad = p.backward(&cache, coef.view());
        let h = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel <= 1e-4, "analytic {analytic} numeric {numeric}");
        };
        for idx in [(0, 0), (1, 5), (2, 11)] {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.weights[idx] += h;
            b.weights[idx] -= h;
            check(grad.weights[idx], (loss(&a) - loss(&b)) / (2.0 * h));
        }
        for z in 0..3 {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.bias[z] += h;
            b.bias[z] -= h;
            check(grad.bias[z], (loss(&a) - loss(&b)) / (2.0 * h));
        }
        for row in 0..p.vocab.num_rows() {
            for c in 0..p.emb_dim() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.embeddings[[row, c]] += h;
                b.embeddings[[row, c]] -= h;
                let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
                let analytic = grad.embeddings.get(&row).map_or(0.0, |g| g[c]);
                check(analytic, numeric);
            }
        }
    }

    #[test]
    fn pretrained_loading() {
        let mut p = params(0.0);
        let before = p.clone();
        let n = load_pretrained_embeddings("cat 1 2 3 4\nunseen 0 0 0 0\n".as_bytes(), &mut p).unwrap();
        assert_eq!(n, 1);
        assert_eq!(p.embeddings.row(p.vocab.row("cat")), array![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            p.embeddings.row(p.vocab.row("the")),
            before.embeddings.row(p.vocab.row("the"))
        );

        let mut q = params(0.0);
        assert_eq!(load_pretrained_embeddings("".as_bytes(), &mut q).unwrap(), 0);
        assert_eq!(q, before);

        let err = load_pretrained_embeddings("the 1 2 3 4\nword 1.0\n".as_bytes(), &mut q).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }
}
