//! Synthetic corpora with planted non-local label constraints.
//!
//! Every sequence is filler tokens labeled `O` with a few trigger tokens
//! spaced far enough apart that no two triggers fall inside one window.
//! Trigger tokens are drawn uniformly from a pool shared by the constrained
//! and the distractor label, so a trigger's label cannot be read off its
//! window; only the position of the trigger among the other triggers decides it.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::conll::{Corpus, Provenance, Sequence};
use crate::data::eval::extract_chunks;
use crate::error::{Error, Result};
use crate::schema::OUTSIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// The first trigger takes the constrained label, later ones the distractor.
    AtMostOnce,
    /// One trigger chosen at random takes the constrained label.
    ExactlyOnce,
    /// The first trigger takes the constrained label, later triggers are left
    /// untagged.
    FirstOccurrenceOnly,
    /// Two trigger pools; the sequence carries either both constrained labels
    /// or both distractors.
    CoOccurrence,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::AtMostOnce => "at-most-once",
            ConstraintKind::ExactlyOnce => "exactly-once",
            ConstraintKind::FirstOccurrenceOnly => "first-occurrence-only",
            ConstraintKind::CoOccurrence => "co-occurrence",
        }
    }
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "at-most-once" => ConstraintKind::AtMostOnce,
            "exactly-once" => ConstraintKind::ExactlyOnce,
            "first-occurrence-only" => ConstraintKind::FirstOccurrenceOnly,
            "co-occurrence" => ConstraintKind::CoOccurrence,
            _ => return Err(Error::Config(format!("unknown constraint {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    /// Entity type carried by the constrained trigger.
    pub constrained: String,
    /// Entity type carried by the other triggers.
    pub distractor: String,
    /// Second constrained/distractor pair, used by co-occurrence only.
    pub partner: (String, String),
    pub trigger_pool: Vec<String>,
    pub partner_pool: Vec<String>,
    pub filler: Vec<String>,
    /// `(count, weight)` pairs for the number of triggers per sequence.
    pub trigger_counts: Vec<(usize, f64)>,
    /// Minimum distance between consecutive triggers.
    pub min_gap: usize,
    /// Minimum filler before the first and after the last trigger.
    pub edge_margin: usize,
    /// Upper bound on extra filler added to each gap and to the final margin.
    pub extra_filler: usize,
    /// Upper bound on extra filler before the first trigger. A wide range
    /// keeps the position of the first trigger uninformative.
    pub lead_extra: usize,
}

impl ConstraintSpec {
    /// Defaults for `kind`: eight triggers, fifty filler words, one to three
    /// triggers per sequence (exactly one pair for co-occurrence). Triggers
    /// are at least three tokens apart, so with a window half-width of up to 2
    /// no trigger's window contains another trigger.
    pub fn new(kind: ConstraintKind) -> Self {
        let words = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        let trigger_counts = match kind {
            ConstraintKind::CoOccurrence => vec![(1, 1.0)],
            _ => vec![(1, 0.45), (2, 0.35), (3, 0.2)],
        };
        ConstraintSpec {
            kind,
            constrained: "KEY".into(),
            distractor: "DIS".into(),
            partner: ("PAR".into(), "PDIS".into()),
            trigger_pool: words("trig", 8),
            partner_pool: words("part", 8),
            filler: words("w", 50),
            trigger_counts,
            min_gap: 3,
            edge_margin: 3,
            extra_filler: 1,
            lead_extra: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Generation(m.to_string()));
        if self.trigger_pool.is_empty() || self.filler.is_empty() {
            return bad("trigger pool and filler vocabulary must be non-empty");
        }
        if self.constrained == self.distractor {
            return bad("constrained and distractor labels must differ");
        }
        if self.min_gap == 0 {
            return bad("minimum gap must be positive");
        }
        if self.trigger_counts.is_empty() || self.trigger_counts.iter().any(|&(_, w)| w.is_nan() || w <= 0.0) {
            return bad("trigger-count weights must be positive");
        }
        let min_count = self.trigger_counts.iter().map(|&(n, _)| n).min().unwrap_or(0);
        match self.kind {
            ConstraintKind::ExactlyOnce if min_count == 0 => {
                bad("exactly-once needs at least one trigger slot per sequence")
            }
            ConstraintKind::CoOccurrence => {
                let (p, d) = &self.partner;
                if self.partner_pool.is_empty() {
                    return bad("co-occurrence needs a partner pool");
                }
                if p == d || [p, d].iter().any(|l| **l == self.constrained || **l == self.distractor) {
                    return bad("co-occurrence labels must be four distinct types");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn begin(kind: &str) -> String {
    format!("B-{kind}")
}

/// Generates `n_sequences` sequences obeying `spec` by construction.
pub fn generate_constraint_corpus(spec: &ConstraintSpec, n_sequences: usize, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = WeightedIndex::new(spec.trigger_counts.iter().map(|&(_, w)| w))
        .map_err(|e| Error::Generation(e.to_string()))?;
    let mut sequences = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        let n = spec.trigger_counts[counts.sample(&mut rng)].0;
        let triggers = plant_triggers(spec, n, &mut rng);
        sequences.push(layout(spec, &triggers, &mut rng));
    }
    Ok(Corpus {
        sequences,
        doc_starts: Vec::new(),
        provenance: Provenance {
            source: format!("synthetic:{}:seed={seed}", spec.kind.name()),
            digit_normalized: false,
        },
    })
}

/// Trigger tokens and their labels, in sequence order.
fn plant_triggers<R: Rng>(spec: &ConstraintSpec, n: usize, rng: &mut R) -> Vec<(String, String)> {
    let draw = |pool: &[String], rng: &mut R| pool.choose(rng).cloned().unwrap_or_default();
    match spec.kind {
        ConstraintKind::AtMostOnce | ConstraintKind::FirstOccurrenceOnly => (0..n)
            .map(|i| {
                let label = if i == 0 {
                    begin(&spec.constrained)
                } else if spec.kind == ConstraintKind::AtMostOnce {
                    begin(&spec.distractor)
                } else {
                    OUTSIDE.to_string()
                };
                (draw(&spec.trigger_pool, rng), label)
            })
            .collect(),
        ConstraintKind::ExactlyOnce => {
            let key = rng.gen_range(0..n);
            (0..n)
                .map(|i| {
                    let kind = if i == key { &spec.constrained } else { &spec.distractor };
                    (draw(&spec.trigger_pool, rng), begin(kind))
                })
                .collect()
        }
        ConstraintKind::CoOccurrence => {
            let mut out = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let both = rng.gen_bool(0.5);
                let (first, second) = if both {
                    (&spec.constrained, &spec.partner.0)
                } else {
                    (&spec.distractor, &spec.partner.1)
                };
                let mut pair = vec![
                    (draw(&spec.trigger_pool, rng), begin(first)),
                    (draw(&spec.partner_pool, rng), begin(second)),
                ];
                pair.shuffle(rng);
                out.extend(pair);
            }
            out
        }
    }
}

fn push_filler<R: Rng>(spec: &ConstraintSpec, count: usize, seq: &mut Sequence, rng: &mut R) {
    for _ in 0..count {
        seq.tokens.push(spec.filler.choose(rng).cloned().unwrap_or_default());
        seq.labels.push(OUTSIDE.to_string());
    }
}

fn layout<R: Rng>(spec: &ConstraintSpec, triggers: &[(String, String)], rng: &mut R) -> Sequence {
    let mut seq = Sequence::default();
    let margin = spec.edge_margin.max(1);
    let lead = margin + rng.gen_range(0..=spec.lead_extra);
    push_filler(spec, lead, &mut seq, rng);
    for (i, (tok, lab)) in triggers.iter().enumerate() {
        seq.tokens.push(tok.clone());
        seq.labels.push(lab.clone());
        let base = if i + 1 == triggers.len() { margin } else { spec.min_gap - 1 };
        push_filler(spec, base + rng.gen_range(0..=spec.extra_filler), &mut seq, rng);
    }
    if triggers.is_empty() {
        push_filler(spec, margin, &mut seq, rng);
    }
    seq.metadata = Some(spec.kind.name().to_string());
    seq
}

/// Checks a labeling against the constraint of `spec`.
pub fn satisfies_constraint<T: AsRef<str>, L: AsRef<str>>(spec: &ConstraintSpec, tokens: &[T], labels: &[L]) -> bool {
    let chunks = extract_chunks(labels);
    let count = |kind: &str| chunks.iter().filter(|c| c.kind == kind).count();
    match spec.kind {
        ConstraintKind::AtMostOnce => count(&spec.constrained) <= 1,
        ConstraintKind::ExactlyOnce => count(&spec.constrained) == 1,
        ConstraintKind::FirstOccurrenceOnly => {
            let Some(first) = chunks.iter().find(|c| c.kind == spec.constrained) else {
                return true;
            };
            count(&spec.constrained) == 1
                && !tokens[..first.start]
                    .iter()
                    .any(|t| spec.trigger_pool.iter().any(|p| p == t.as_ref()))
        }
        ConstraintKind::CoOccurrence => (count(&spec.constrained) > 0) == (count(&spec.partner.0) > 0),
    }
}

/// Number of sequences whose gold labels break the constraint.
pub fn audit_corpus(spec: &ConstraintSpec, corpus: &Corpus) -> usize {
    corpus
        .sequences
        .iter()
        .filter(|s| !satisfies_constraint(spec, &s.tokens, &s.labels))
        .count()
}
