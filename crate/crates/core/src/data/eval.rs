//! Segment-level precision, recall and F1 in the style of `conlleval`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};

/// A labeled span `[start, end)` with its full hierarchical type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Chunk {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

fn split(label: &str) -> (char, &str) {
    if label == "O" {
        return ('O', "");
    }
    match label.split_once('-') {
        Some((p @ ("B" | "I" | "E" | "S"), rest)) => (p.chars().next().unwrap_or('I'), rest),
        _ => ('I', label),
    }
}

fn ends_chunk(prev: (char, &str), cur: (char, &str)) -> bool {
    let (pt, pk) = prev;
    let (ct, ck) = cur;
    matches!(
        (pt, ct),
        ('B', 'B') | ('B', 'S') | ('B', 'O') | ('I', 'B') | ('I', 'S') | ('I', 'O')
    ) || matches!(pt, 'E' | 'S')
        || (pt != 'O' && pk != ck)
}

fn starts_chunk(prev: (char, &str), cur: (char, &str)) -> bool {
    let (pt, pk) = prev;
    let (ct, ck) = cur;
    matches!(ct, 'B' | 'S')
        || (matches!(pt, 'E' | 'S' | 'O') && matches!(ct, 'E' | 'I'))
        || (ct != 'O' && pk != ck)
}

/// Segments a label sequence. A segment opens at `B-X`/`S-X`, or at an
/// `I-X`/`E-X` that does not continue a segment of the same type, and runs
/// while the type stays the same and no boundary closes it.
pub fn extract_chunks<S: AsRef<str>>(labels: &[S]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut prev = ('O', "");
    let mut open: Option<(usize, &str)> = None;
    for (t, label) in labels.iter().enumerate() {
        let cur = split(label.as_ref());
        if let Some((start, kind)) = open {
            if ends_chunk(prev, cur) {
                chunks.push(Chunk {
                    kind: kind.to_string(),
                    start,
                    end: t,
                });
                open = None;
            }
        }
        if starts_chunk(prev, cur) {
            open = Some((t, cur.1));
        }
        prev = cur;
    }
    if let Some((start, kind)) = open {
        chunks.push(Chunk {
            kind: kind.to_string(),
            start,
            end: labels.len(),
        });
    }
    chunks
}

/// Counts and percentages for one row of a report.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub correct: usize,
    pub predicted: usize,
    /// Number of gold segments (the support).
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = pct(correct, predicted);
        let recall = pct(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            correct,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

/// Overall and per-type segment scores, in percent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkF1Report {
    pub overall: Scores,
    pub per_entity: BTreeMap<String, Scores>,
    pub tokens: usize,
    pub token_accuracy: f64,
}

/// Segment-level scores. A predicted segment is correct only when both its
/// boundaries and its full type match a gold segment.
pub fn chunk_f1<A, B, GS, PS>(gold: &[GS], pred: &[PS]) -> Result<ChunkF1Report>
where
    A: AsRef<str>,
    B: AsRef<str>,
    GS: AsRef<[A]>,
    PS: AsRef<[B]>,
{
    if gold.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    #[derive(Default)]
    struct Tally {
        correct: usize,
        predicted: usize,
        gold: usize,
    }
    let mut by_type: BTreeMap<String, Tally> = BTreeMap::new();
    let mut tokens = 0;
    let mut token_hits = 0;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(Error::Dimension(format!(
                "sequence {i}: {} gold labels but {} predicted",
                g.len(),
                p.len()
            )));
        }
        tokens += g.len();
        token_hits += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
        let gc = extract_chunks(g);
        let pc = extract_chunks(p);
        let gold_set: HashSet<&Chunk> = gc.iter().collect();
        for c in &gc {
            by_type.entry(c.kind.clone()).or_default().gold += 1;
        }
        for c in &pc {
            let entry = by_type.entry(c.kind.clone()).or_default();
            entry.predicted += 1;
            if gold_set.contains(c) {
                entry.correct += 1;
            }
        }
    }
    let (mut c, mut p, mut g) = (0, 0, 0);
    let per_entity = by_type
        .into_iter()
        .map(|(k, t)| {
            c += t.correct;
            p += t.predicted;
            g += t.gold;
            (k, Scores::from_counts(t.correct, t.predicted, t.gold))
        })
        .collect();
    Ok(ChunkF1Report {
        overall: Scores::from_counts(c, p, g),
        per_entity,
        tokens,
        token_accuracy: if tokens == 0 {
            0.0
        } else {
            100.0 * token_hits as f64 / tokens as f64
        },
    })
}

impl ChunkF1Report {
    /// `key=value` lines for machine consumption.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut row = |prefix: &str, s: &Scores| {
            out.push_str(&format!(
                "{prefix}.precision={:.4}\n{prefix}.recall={:.4}\n{prefix}.f1={:.4}\n{prefix}.correct={}\n{prefix}.predicted={}\n{prefix}.support={}\n",
                s.precision, s.recall, s.f1, s.correct, s.predicted, s.gold
            ));
        };
        row("overall", &self.overall);
        for (k, s) in &self.per_entity {
            row(&format!("entity.{k}"), s);
        }
        out.push_str(&format!("tokens={}\ntoken_accuracy={:.4}\n", self.tokens, self.token_accuracy));
        out
    }
}

impl fmt::Display for ChunkF1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_entity
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("overall".len());
        writeln!(
            f,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, self.overall.gold, self.overall.predicted, self.overall.correct
        )?;
        writeln!(
            f,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "label", "precision", "recall", "F1", "S"
        )?;
        let line = |f: &mut fmt::Formatter<'_>, name: &str, s: &Scores| {
            writeln!(
                f,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
                name, s.precision, s.recall, s.f1, s.gold
            )
        };
        line(f, "overall", &self.overall)?;
        for (k, s) in &self.per_entity {
            line(f, k, s)?;
        }
        Ok(())
    }
}

/// One row of a side-by-side comparison of two prediction sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub kind: String,
    pub baseline_f1: f64,
    pub candidate_f1: f64,
    pub support: usize,
}

impl ComparisonRow {
    pub fn improvement(&self) -> f64 {
        self.candidate_f1 - self.baseline_f1
    }
}

/// Per-type F1 of two reports over the same gold data, largest improvement
/// first.
pub fn compare_reports(baseline: &ChunkF1Report, candidate: &ChunkF1Report) -> Vec<ComparisonRow> {
    let mut kinds: Vec<&String> = baseline.per_entity.keys().chain(candidate.per_entity.keys()).collect();
    kinds.sort();
    kinds.dedup();
    let mut rows: Vec<ComparisonRow> = kinds
        .into_iter()
        .map(|k| {
            let b = baseline.per_entity.get(k).copied().unwrap_or_default();
            let c = candidate.per_entity.get(k).copied().unwrap_or_default();
            ComparisonRow {
                kind: k.clone(),
                baseline_f1: b.f1,
                candidate_f1: c.f1,
                support: b.gold.max(c.gold),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.improvement()
            .total_cmp(&a.improvement())
            .then_with(|| a.kind.cmp(&b.kind))
    });
    rows
}

/// Renders a comparison table with columns label, baseline, candidate, `+`, S.
pub fn format_comparison(rows: &[ComparisonRow], baseline: &ChunkF1Report, candidate: &ChunkF1Report) -> String {
    let width = rows.iter().map(|r| r.kind.len()).max().unwrap_or(0).max("overall".len());
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>7}  {:>7}\n",
        "label", "baseline", "candidate", "+", "S"
    );
    let mut line = |name: &str, b: f64, c: f64, s: usize| {
        out.push_str(&format!("{name:<width$}  {b:>9.2}  {c:>9.2}  {:>7.2}  {s:>7}\n", c - b));
    };
    line("overall", baseline.overall.f1, candidate.overall.f1, baseline.overall.gold);
    for r in rows {
        line(&r.kind, r.baseline_f1, r.candidate_f1, r.support);
    }
    out
}
