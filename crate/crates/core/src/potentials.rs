//! Log-potential tables: local scores, the output-label fold, and the
//! (optionally low-rank) transition matrix with hard-constraint masking.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{LabelSchema, StateSpace};

/// Stand-in for a log-potential of minus infinity. Sums of a few of these with
/// ordinary scores stay finite, and `exp` of it is exactly zero.
pub const NEG_INF: f64 = -1e30;

const IMPOSSIBLE: f64 = NEG_INF / 2.0;

/// True for scores at or below half the sentinel, i.e. masked configurations.
#[inline]
pub fn is_impossible(score: f64) -> bool {
    score <= IMPOSSIBLE
}

/// Transition log-potential parameters: either a pair of rank-k embedding
/// matrices with `A = Uᵀ V` or a dense M×M matrix.
///
/// The same type doubles as the container for transition gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TransitionFactors {
    /// `u` and `v` are k×M; column `z` is the embedding of state `z`.
    Factorized { u: Array2<f64>, v: Array2<f64> },
    FullRank { a: Array2<f64> },
}

impl TransitionFactors {
    pub fn factorized(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::Dimension(format!(
                "U is {:?} but V is {:?}",
                u.dim(),
                v.dim()
            )));
        }
        if u.nrows() == 0 || u.ncols() == 0 {
            return Err(Error::Dimension("factor matrices must be non-empty".into()));
        }
        Ok(TransitionFactors::Factorized { u, v })
    }

    pub fn full_rank(a: Array2<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "transition matrix must be square and non-empty, got {:?}",
                a.dim()
            )));
        }
        Ok(TransitionFactors::FullRank { a })
    }

    /// Factors with entries uniform on `[-sqrt(1/k), sqrt(1/k)]`.
    pub fn init_factorized<R: Rng>(m: usize, k: usize, rng: &mut R) -> Self {
        let bound = (1.0 / k as f64).sqrt();
        let u = Array2::from_shape_fn((k, m), |_| rng.gen_range(-bound..=bound));
        let v = Array2::from_shape_fn((k, m), |_| rng.gen_range(-bound..=bound));
        TransitionFactors::Factorized { u, v }
    }

    /// Dense matrix with entries uniform on `[-sqrt(1/M), sqrt(1/M)]`.
    pub fn init_full_rank<R: Rng>(m: usize, rng: &mut R) -> Self {
        let bound = (1.0 / m as f64).sqrt();
        TransitionFactors::FullRank {
            a: Array2::from_shape_fn((m, m), |_| rng.gen_range(-bound..=bound)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            TransitionFactors::Factorized { u, v } => TransitionFactors::Factorized {
                u: Array2::zeros(u.raw_dim()),
                v: Array2::zeros(v.raw_dim()),
            },
            TransitionFactors::FullRank { a } => TransitionFactors::FullRank {
                a: Array2::zeros(a.raw_dim()),
            },
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            TransitionFactors::Factorized { u, .. } => u.ncols(),
            TransitionFactors::FullRank { a } => a.nrows(),
        }
    }

    /// Embedding rank `k`, or `None` in full-rank mode.
    pub fn rank(&self) -> Option<usize> {
        match self {
            TransitionFactors::Factorized { u, .. } => Some(u.nrows()),
            TransitionFactors::FullRank { .. } => None,
        }
    }

    /// `2·M·k` when factorized, `M²` when full rank.
    pub fn parameter_count(&self) -> usize {
        match self {
            TransitionFactors::Factorized { u, v } => u.len() + v.len(),
            TransitionFactors::FullRank { a } => a.len(),
        }
    }

    /// The unmasked M×M transition matrix.
    pub fn dense(&self) -> Array2<f64> {
        match self {
            TransitionFactors::Factorized { u, v } => u.t().dot(v),
            TransitionFactors::FullRank { a } => a.clone(),
        }
    }

    /// Maps a gradient with respect to the dense transition matrix onto the
    /// stored parameters: `dU = V·Gᵀ`, `dV = U·G`.
    pub fn backprop(&self, grad_dense: ArrayView2<f64>) -> Self {
        match self {
            TransitionFactors::Factorized { u, v } => TransitionFactors::Factorized {
                u: v.dot(&grad_dense.t()),
                v: u.dot(&grad_dense),
            },
            TransitionFactors::FullRank { .. } => TransitionFactors::FullRank {
                a: grad_dense.to_owned(),
            },
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        match self {
            TransitionFactors::Factorized { u, v } => vec![u, v],
            TransitionFactors::FullRank { a } => vec![a],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            TransitionFactors::Factorized { u, v } => vec![u, v],
            TransitionFactors::FullRank { a } => vec![a],
        }
    }
}

/// Which latent-state pairs may be adjacent, and which states may open or
/// close a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMask {
    allowed: Array2<bool>,
    start: Vec<bool>,
    end: Vec<bool>,
}

impl ConstraintMask {
    pub fn unconstrained(m: usize) -> Self {
        ConstraintMask {
            allowed: Array2::from_elem((m, m), true),
            start: vec![true; m],
            end: vec![true; m],
        }
    }

    /// Lifts the label-level encoding rules to latent states through the
    /// state→label map.
    pub fn from_schema(schema: &LabelSchema, states: &StateSpace) -> Result<Self> {
        if schema.len() != states.num_labels() {
            return Err(Error::Dimension(format!(
                "schema has {} labels, state space {}",
                schema.len(),
                states.num_labels()
            )));
        }
        let m = states.num_states();
        let label = |z: usize| states.label_of(z);
        Ok(ConstraintMask {
            allowed: Array2::from_shape_fn((m, m), |(i, j)| {
                schema.transition_allowed(label(i), label(j))
            }),
            start: (0..m).map(|z| schema.can_start(label(z))).collect(),
            end: (0..m).map(|z| schema.can_end(label(z))).collect(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.start.len()
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[[from, to]]
    }

    pub fn forbid(&mut self, from: usize, to: usize) {
        self.allowed[[from, to]] = false;
    }

    pub fn can_start(&self, z: usize) -> bool {
        self.start[z]
    }

    pub fn can_end(&self, z: usize) -> bool {
        self.end[z]
    }

    /// Masks the first and last rows of a local score table.
    pub fn apply_boundaries(&self, psi: &mut LocalPotentials) {
        let t = psi.len();
        for z in 0..self.num_states() {
            if !self.start[z] {
                psi.scores[[0, z]] = NEG_INF;
            }
            if !self.end[z] {
                psi.scores[[t - 1, z]] = NEG_INF;
            }
        }
    }

    /// True if the latent path never uses a forbidden transition or boundary.
    pub fn admits(&self, path: &[usize]) -> bool {
        match (path.first(), path.last()) {
            (Some(&first), Some(&last)) => {
                self.start[first]
                    && self.end[last]
                    && path.windows(2).all(|w| self.allowed[[w[0], w[1]]])
            }
            _ => true,
        }
    }
}

/// A T×M table of local log-scores; row `t` scores every latent state at
/// position `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPotentials {
    scores: Array2<f64>,
}

impl LocalPotentials {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::Dimension(
                "local potentials need at least one position and one state".into(),
            ));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("local potentials must be finite".into()));
        }
        Ok(LocalPotentials { scores })
    }

    /// Sequence length T.
    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.scores.ncols()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn into_scores(self) -> Array2<f64> {
        self.scores
    }
}

/// The dense transition matrix with forbidden entries replaced by [`NEG_INF`].
pub fn effective_transition_matrix(
    factors: &TransitionFactors,
    mask: &ConstraintMask,
) -> Result<Array2<f64>> {
    if factors.num_states() != mask.num_states() {
        return Err(Error::Dimension(format!(
            "factors cover {} states, mask {}",
            factors.num_states(),
            mask.num_states()
        )));
    }
    let mut dense = factors.dense();
    for ((i, j), a) in dense.indexed_iter_mut() {
        if !mask.allowed(i, j) {
            *a = NEG_INF;
        }
    }
    Ok(dense)
}

/// Clamps local scores to a gold label sequence: every state whose label
/// differs from the gold label at that position is set to [`NEG_INF`].
pub fn fold_output_potential(
    psi: &LocalPotentials,
    gold: &[usize],
    states: &StateSpace,
) -> Result<LocalPotentials> {
    if gold.len() != psi.len() {
        return Err(Error::Dimension(format!(
            "gold has {} labels for {} positions",
            gold.len(),
            psi.len()
        )));
    }
    if psi.num_states() != states.num_states() {
        return Err(Error::Dimension(format!(
            "potentials have {} states, state space {}",
            psi.num_states(),
            states.num_states()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= states.num_labels()) {
        return Err(Error::UnknownLabel(format!("label index {bad}")));
    }
    let mut scores = psi.scores.clone();
    for (mut row, &y) in scores.axis_iter_mut(Axis(0)).zip(gold) {
        for (z, s) in row.iter_mut().enumerate() {
            if states.label_of(z) != y {
                *s = NEG_INF;
            }
        }
    }
    Ok(LocalPotentials { scores })
}
