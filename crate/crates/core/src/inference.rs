//! Exact inference on the latent-state lattice.
//!
//! All messages are kept in log space. Masked configurations carry the
//! [`NEG_INF`] sentinel, and any message that can only be reached through a
//! masked configuration is clamped back to the sentinel so values never drift
//! toward non-finite territory.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::potentials::{fold_output_potential, is_impossible, LocalPotentials, NEG_INF};
use crate::schema::StateSpace;

/// Local scores and effective transition scores for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    psi: Array2<f64>,
    trans: Array2<f64>,
}

impl Lattice {
    pub fn new(psi: LocalPotentials, trans: Array2<f64>) -> Result<Self> {
        Self::from_arrays(psi.into_scores(), trans)
    }

    pub fn from_arrays(psi: Array2<f64>, trans: Array2<f64>) -> Result<Self> {
        if psi.nrows() == 0 {
            return Err(Error::Dimension("lattice needs at least one position".into()));
        }
        if trans.dim() != (psi.ncols(), psi.ncols()) {
            return Err(Error::Dimension(format!(
                "transitions are {:?} for {} states",
                trans.dim(),
                psi.ncols()
            )));
        }
        if psi.iter().chain(trans.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dimension("lattice scores must be finite".into()));
        }
        Ok(Lattice { psi, trans })
    }

    /// Sequence length T.
    pub fn len(&self) -> usize {
        self.psi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.psi.ncols()
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn trans(&self) -> &Array2<f64> {
        &self.trans
    }

    /// Energy of one latent path: local scores plus transition scores.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        let local: f64 = path.iter().enumerate().map(|(t, &z)| self.psi[[t, z]]).sum();
        let edges: f64 = path.windows(2).map(|w| self.trans[[w[0], w[1]]]).sum();
        local + edges
    }

    /// Same transitions, output labels clamped to `gold`.
    pub fn clamped(&self, gold: &[usize], states: &StateSpace) -> Result<Lattice> {
        let psi = LocalPotentials::new(self.psi.clone())?;
        let folded = fold_output_potential(&psi, gold, states)?;
        Ok(Lattice {
            psi: folded.into_scores(),
            trans: self.trans.clone(),
        })
    }
}

/// `log Σ exp(v)` with a max shift. Returns [`NEG_INF`] when every input is
/// masked.
///
/// # Panics
///
/// Panics on an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "log_sum_exp of an empty list");
    lse_iter(values.iter().copied())
}

#[inline]
fn lse_iter<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if is_impossible(max) {
        return NEG_INF;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[inline]
fn clamp(v: f64) -> f64 {
    if is_impossible(v) {
        NEG_INF
    } else {
        v
    }
}

fn forward_messages(psi: ArrayView2<f64>, trans: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, m) = psi.dim();
    let mut alpha = Array2::from_elem((t_len, m), NEG_INF);
    alpha.row_mut(0).assign(&psi.row(0).mapv(clamp));
    for t in 1..t_len {
        let (done, mut rest) = alpha.view_mut().split_at(Axis(0), t);
        let prev = done.row(t - 1);
        let mut cur = rest.row_mut(0);
        for j in 0..m {
            let col = trans.column(j);
            let inc = lse_iter(prev.iter().zip(col.iter()).map(|(a, b)| a + b));
            cur[j] = clamp(psi[[t, j]] + inc);
        }
    }
    alpha
}

fn backward_messages(psi: ArrayView2<f64>, trans: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, m) = psi.dim();
    let mut beta = Array2::zeros((t_len, m));
    for t in (0..t_len - 1).rev() {
        let next: Array1<f64> = &psi.row(t + 1) + &beta.row(t + 1);
        for i in 0..m {
            let row = trans.row(i);
            beta[[t, i]] = lse_iter(row.iter().zip(next.iter()).map(|(a, b)| a + b));
        }
    }
    beta
}

fn final_lse(row: ArrayView1<f64>) -> f64 {
    lse_iter(row.iter().copied())
}

/// Log-partition over all latent paths. Returns [`NEG_INF`] if every path is
/// masked.
pub fn forward_log_partition(lattice: &Lattice) -> f64 {
    let alpha = forward_messages(lattice.psi.view(), lattice.trans.view());
    final_lse(alpha.row(lattice.len() - 1))
}

/// Log-partition computed with the backward recursion instead.
pub fn backward_log_partition(lattice: &Lattice) -> f64 {
    let beta = backward_messages(lattice.psi.view(), lattice.trans.view());
    lse_iter(
        lattice
            .psi
            .row(0)
            .iter()
            .zip(beta.row(0).iter())
            .map(|(a, b)| a + b),
    )
}

/// Log-sum over latent paths whose labels equal `gold`. Subtracting the
/// log-partition gives `log p(gold | x)`. Returns [`NEG_INF`] when no
/// consistent path survives the constraints.
pub fn clamped_log_score(lattice: &Lattice, gold: &[usize], states: &StateSpace) -> Result<f64> {
    Ok(forward_log_partition(&lattice.clamped(gold, states)?))
}

/// Forward-backward output. Edge marginals are derived on demand from the
/// stored messages.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub log_z: f64,
    /// T×M posterior state probabilities.
    pub node_marginals: Array2<f64>,
    alpha: Array2<f64>,
    beta: Array2<f64>,
}

impl InferenceResult {
    /// M×M posterior over the pair `(z_t, z_{t+1})`.
    pub fn edge_marginal(&self, lattice: &Lattice, t: usize) -> Array2<f64> {
        let m = lattice.num_states();
        let next: Array1<f64> = &lattice.psi.row(t + 1) + &self.beta.row(t + 1);
        Array2::from_shape_fn((m, m), |(i, j)| {
            (self.alpha[[t, i]] + lattice.trans[[i, j]] + next[j] - self.log_z).exp()
        })
    }

    /// Edge marginals summed over positions: expected transition counts.
    pub fn expected_transitions(&self, lattice: &Lattice) -> Array2<f64> {
        let m = lattice.num_states();
        let mut acc = Array2::zeros((m, m));
        for t in 0..lattice.len().saturating_sub(1) {
            let next: Array1<f64> = &lattice.psi.row(t + 1) + &self.beta.row(t + 1);
            for i in 0..m {
                let a = self.alpha[[t, i]] - self.log_z;
                if is_impossible(a) {
                    continue;
                }
                let trans_row = lattice.trans.row(i);
                let mut acc_row = acc.row_mut(i);
                for j in 0..m {
                    acc_row[j] += (a + trans_row[j] + next[j]).exp();
                }
            }
        }
        acc
    }
}

/// Forward-backward: log-partition and node marginals.
pub fn marginals(lattice: &Lattice) -> Result<InferenceResult> {
    let alpha = forward_messages(lattice.psi.view(), lattice.trans.view());
    let log_z = final_lse(alpha.row(lattice.len() - 1));
    if is_impossible(log_z) {
        return Err(Error::InfeasibleDecode);
    }
    let beta = backward_messages(lattice.psi.view(), lattice.trans.view());
    let node_marginals = (&alpha + &beta).mapv(|v| (v - log_z).exp());
    Ok(InferenceResult {
        log_z,
        node_marginals,
        alpha,
        beta,
    })
}

/// Best latent path and the labels it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub states: Vec<usize>,
    pub labels: Vec<usize>,
    pub score: f64,
}

/// MAP decoding over latent paths. Ties are broken toward the lowest state
/// index, both in backpointers and in the final argmax.
pub fn viterbi_decode(lattice: &Lattice, states: &StateSpace) -> Result<Decoded> {
    let (t_len, m) = lattice.psi.dim();
    if states.num_states() != m {
        return Err(Error::Dimension(format!(
            "lattice has {m} states, state space {}",
            states.num_states()
        )));
    }
    let mut delta = Array2::from_elem((t_len, m), NEG_INF);
    let mut back = Array2::<usize>::zeros((t_len, m));
    delta.row_mut(0).assign(&lattice.psi.row(0).mapv(clamp));
    for t in 1..t_len {
        for j in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..m {
                let s = delta[[t - 1, i]] + lattice.trans[[i, j]];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            delta[[t, j]] = clamp(best + lattice.psi[[t, j]]);
            back[[t, j]] = arg;
        }
    }
    let last = delta.row(t_len - 1);
    let (mut z, score) = last
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) });
    if is_impossible(score) {
        return Err(Error::InfeasibleDecode);
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = z;
    for t in (1..t_len).rev() {
        z = back[[t, z]];
        path[t - 1] = z;
    }
    let feasible = path
        .windows(2)
        .all(|w| !is_impossible(lattice.trans[[w[0], w[1]]]))
        && path.iter().enumerate().all(|(t, &z)| !is_impossible(lattice.psi[[t, z]]));
    crate::audit::record_decode(feasible);
    let labels = path.iter().map(|&z| states.label_of(z)).collect();
    Ok(Decoded {
        states: path,
        labels,
        score,
    })
}
