//! Brute-force reference implementations shared by the integration tests.
//! Everything here enumerates all latent paths explicitly.

#![allow(dead_code)]

use elcrf::featurizer::{FeaturizerParams, Vocab};
use elcrf::potentials::{is_impossible, TransitionFactors, NEG_INF};
use elcrf::schema::{LabelSchema, Scheme, StateSpace};
use elcrf::{ModelParams, TrainConfig};
use ndarray::{Array2, Array3};
use rand::Rng;

/// Every sequence in `0..m` of length `t`, in lexicographic order.
pub fn all_paths(m: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..m).map(move |z| {
                    let mut q = p.clone();
                    q.push(z);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn path_energy(psi: &Array2<f64>, trans: &Array2<f64>, path: &[usize]) -> f64 {
    let mut e = psi[[0, path[0]]];
    for t in 1..path.len() {
        e += trans[[path[t - 1], path[t]]] + psi[[t, path[t]]];
    }
    e
}

fn lse(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| !is_impossible(*x)).collect();
    if v.is_empty() {
        return NEG_INF;
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn brute_log_z(psi: &Array2<f64>, trans: &Array2<f64>) -> f64 {
    let (t, m) = psi.dim();
    lse(all_paths(m, t).iter().map(|p| path_energy(psi, trans, p)))
}

/// Node marginals `T×M` and edge marginals `(T−1)×M×M`.
pub fn brute_marginals(psi: &Array2<f64>, trans: &Array2<f64>) -> (Array2<f64>, Array3<f64>) {
    let (t, m) = psi.dim();
    let log_z = brute_log_z(psi, trans);
    let mut node = Array2::zeros((t, m));
    let mut edge = Array3::zeros((t.saturating_sub(1), m, m));
    for p in all_paths(m, t) {
        let e = path_energy(psi, trans, &p);
        if is_impossible(e) {
            continue;
        }
        let prob = (e - log_z).exp();
        for s in 0..t {
            node[[s, p[s]]] += prob;
            if s + 1 < t {
                edge[[s, p[s], p[s + 1]]] += prob;
            }
        }
    }
    (node, edge)
}

/// Log-sum over latent paths whose labels equal `gold`.
pub fn brute_clamped(psi: &Array2<f64>, trans: &Array2<f64>, gold: &[usize], states: &StateSpace) -> f64 {
    let (t, m) = psi.dim();
    lse(all_paths(m, t)
        .iter()
        .filter(|p| p.iter().zip(gold).all(|(&z, &y)| states.label_of(z) == y))
        .map(|p| path_energy(psi, trans, p)))
}

/// Highest-energy path. Among equal scores the winner is the path that is
/// smallest when compared from the last position backwards, which is what
/// lowest-index backpointers produce.
pub fn brute_viterbi(psi: &Array2<f64>, trans: &Array2<f64>) -> (f64, Vec<usize>) {
    let (t, m) = psi.dim();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in all_paths(m, t) {
        let e = path_energy(psi, trans, &p);
        let better = match &best {
            None => true,
            Some((b, bp)) => e > *b || (e == *b && p.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((e, p));
        }
    }
    best.unwrap()
}

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

/// Small integers, so that many paths tie exactly.
pub fn integer_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2..=2) as f64)
}

/// Forbids a random subset of transitions, keeping at least one feasible path.
pub fn sprinkle_mask<R: Rng>(rng: &mut R, trans: &mut Array2<f64>, rate: f64) {
    let m = trans.nrows();
    for i in 0..m {
        for j in 0..m {
            if i != j && rng.gen_bool(rate) {
                trans[[i, j]] = NEG_INF;
            }
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// A random model over the labels `O, B-X, I-X, B-Y, I-Y` with random
/// state sizes, either factorized or full rank.
pub fn random_model<R: Rng>(rng: &mut R, full_rank: bool) -> ModelParams {
    let schema = LabelSchema::new(
        labels(&["O", "B-X", "I-X", "B-Y", "I-Y"]),
        vec![1; 5],
        Scheme::Iob,
    )
    .unwrap();
    let sizes: Vec<usize> = (0..5).map(|_| rng.gen_range(1..=2)).collect();
    let states = StateSpace::from_sizes(&sizes).unwrap();
    let m = states.num_states();
    let transitions = if full_rank {
        TransitionFactors::full_rank(uniform_matrix(rng, m, m, 1.0)).unwrap()
    } else {
        let k = rng.gen_range(1..=3);
        TransitionFactors::factorized(uniform_matrix(rng, k, m, 1.0), uniform_matrix(rng, k, m, 1.0)).unwrap()
    };
    let mut featurizer =
        FeaturizerParams::init(Vocab::build(["a", "b", "c", "d"]), m, 3, 1, 0.3, rng).unwrap();
    featurizer.embeddings = uniform_matrix(rng, featurizer.vocab.num_rows(), 3, 1.0);
    featurizer.weights = uniform_matrix(rng, m, featurizer.feature_dim(), 1.0);
    featurizer.bias = uniform_matrix(rng, 1, m, 1.0).row(0).to_owned();
    let config = TrainConfig {
        full_rank,
        emb_dim: 3,
        window: 1,
        ..Default::default()
    };
    ModelParams::from_parts(config, schema, states, transitions, featurizer).unwrap()
}

/// A random valid IOB labeling over `O, B-X, I-X, B-Y, I-Y`, with tokens that
/// include one out-of-vocabulary word.
pub fn random_example<R: Rng>(rng: &mut R, len: usize) -> (Vec<String>, Vec<String>) {
    let words = ["a", "b", "c", "d", "zz"];
    let tokens = (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
    let mut labs: Vec<String> = Vec::with_capacity(len);
    for t in 0..len {
        let open = t > 0 && labs[t - 1] != "O";
        let kind = labs.last().map(|l| l.trim_start_matches(['B', 'I', '-']).to_string());
        let choice = rng.gen_range(0..if open { 4 } else { 3 });
        let l = match choice {
            0 => "O".to_string(),
            1 => "B-X".to_string(),
            2 => "B-Y".to_string(),
            _ => format!("I-{}", kind.unwrap()),
        };
        labs.push(l);
    }
    (tokens, labs)
}
