//! Whitespace-column CoNLL files: one token per line, first column the token,
//! last column the label, blank lines between sequences.

use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::featurizer::normalize_digits;
use crate::schema::Tag;

/// First field of a line that opens a new document.
pub const DEFAULT_DOC_SEPARATOR: &str = "-DOCSTART-";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sequence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    /// Free-form annotation, e.g. the planted constraint of a synthetic sequence.
    pub metadata: Option<String>,
}

impl Sequence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Self {
        Sequence {
            tokens,
            labels,
            metadata: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub source: String,
    pub digit_normalized: bool,
}

/// Labeled sequences, optionally grouped into documents.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sequences: Vec<Sequence>,
    /// Indices of sequences that open a document. Empty means every sequence
    /// is its own document.
    pub doc_starts: Vec<usize>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Corpus {
            sequences,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Document extents as ranges over `sequences`.
    pub fn documents(&self) -> Vec<Range<usize>> {
        let n = self.sequences.len();
        if self.doc_starts.is_empty() {
            return (0..n).map(|i| i..i + 1).collect();
        }
        let mut starts: Vec<usize> = self.doc_starts.iter().copied().filter(|&s| s < n).collect();
        if starts.first() != Some(&0) && n > 0 {
            starts.insert(0, 0);
        }
        starts.dedup();
        starts
            .iter()
            .enumerate()
            .map(|(i, &s)| s..starts.get(i + 1).copied().unwrap_or(n))
            .filter(|r| !r.is_empty())
            .collect()
    }

    /// Sequences outside the given document range, keeping document structure.
    pub fn without(&self, held_out: Range<usize>) -> Corpus {
        let docs = self.documents();
        let mut out = Corpus {
            provenance: self.provenance.clone(),
            ..Default::default()
        };
        for doc in docs {
            if doc == held_out {
                continue;
            }
            out.doc_starts.push(out.sequences.len());
            out.sequences.extend(self.sequences[doc].iter().cloned());
        }
        out
    }

    pub fn label_sequences(&self) -> impl Iterator<Item = &[String]> {
        self.sequences.iter().map(|s| s.labels.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct ReadOptions {
    pub digit_normalize: bool,
    /// Lines whose first field equals this open a new document.
    pub doc_separator: Option<String>,
    pub source: String,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            digit_normalize: false,
            doc_separator: Some(DEFAULT_DOC_SEPARATOR.to_string()),
            source: String::new(),
        }
    }
}

/// Reads a labeled CoNLL stream.
pub fn read_conll<R: BufRead>(source: R, digit_normalize: bool) -> Result<Corpus> {
    read_conll_with(
        source,
        &ReadOptions {
            digit_normalize,
            ..Default::default()
        },
    )
}

pub fn read_conll_with<R: BufRead>(source: R, opts: &ReadOptions) -> Result<Corpus> {
    let mut corpus = Corpus {
        provenance: Provenance {
            source: opts.source.clone(),
            digit_normalized: opts.digit_normalize,
        },
        ..Default::default()
    };
    let mut cur = Sequence::default();
    let flush = |cur: &mut Sequence, corpus: &mut Corpus| {
        if !cur.is_empty() {
            corpus.sequences.push(std::mem::take(cur));
        }
    };
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(first) = fields.next() else {
            flush(&mut cur, &mut corpus);
            continue;
        };
        if opts.doc_separator.as_deref() == Some(first) {
            flush(&mut cur, &mut corpus);
            corpus.doc_starts.push(corpus.sequences.len());
            continue;
        }
        let Some(label) = fields.last() else {
            return Err(Error::Format {
                line: lineno + 1,
                message: format!("expected token and label columns, got {line:?}"),
            });
        };
        Tag::parse(label).map_err(|e| Error::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let token = if opts.digit_normalize {
            normalize_digits(first)
        } else {
            first.to_string()
        };
        cur.tokens.push(token);
        cur.labels.push(label.to_string());
    }
    flush(&mut cur, &mut corpus);
    corpus.doc_starts.dedup();
    Ok(corpus)
}

/// Writes `token label` lines with blank-line separators. Document breaks are
/// written as separator lines.
pub fn write_conll<W: Write>(mut out: W, corpus: &Corpus) -> Result<()> {
    let mut starts = corpus.doc_starts.iter().peekable();
    for (i, seq) in corpus.sequences.iter().enumerate() {
        while starts.peek() == Some(&&i) {
            writeln!(out, "{DEFAULT_DOC_SEPARATOR}\n")?;
            starts.next();
        }
        for (tok, lab) in seq.tokens.iter().zip(&seq.labels) {
            writeln!(out, "{tok} {lab}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A block of raw column lines to be tagged, with any document separator line
/// that preceded it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawBlock {
    pub separator_before: Vec<String>,
    pub lines: Vec<String>,
}

impl RawBlock {
    /// First whitespace field of every line.
    pub fn tokens(&self, digit_normalize: bool) -> Vec<String> {
        self.lines
            .iter()
            .map(|l| {
                let tok = l.split_whitespace().next().unwrap_or_default();
                if digit_normalize {
                    normalize_digits(tok)
                } else {
                    tok.to_string()
                }
            })
            .collect()
    }
}

/// Reads column blocks without interpreting labels; lines may have one or
/// more columns. Separator lines are kept verbatim.
pub fn read_raw_blocks<R: BufRead>(source: R, doc_separator: Option<&str>) -> Result<Vec<RawBlock>> {
    let mut blocks = Vec::new();
    let mut cur = RawBlock::default();
    let mut pending_sep: Vec<String> = Vec::new();
    for line in source.lines() {
        let line = line?;
        let trimmed = line.trim_end();
        let first = trimmed.split_whitespace().next();
        match first {
            None => {
                if !cur.lines.is_empty() {
                    blocks.push(std::mem::take(&mut cur));
                }
            }
            Some(f) if Some(f) == doc_separator => {
                if !cur.lines.is_empty() {
                    blocks.push(std::mem::take(&mut cur));
                }
                pending_sep.push(trimmed.to_string());
            }
            Some(_) => {
                if cur.lines.is_empty() {
                    cur.separator_before = std::mem::take(&mut pending_sep);
                }
                cur.lines.push(trimmed.to_string());
            }
        }
    }
    if !cur.lines.is_empty() {
        blocks.push(cur);
    }
    Ok(blocks)
}

/// Writes blocks with one extra column appended to every line.
pub fn write_tagged_blocks<W: Write>(
    mut out: W,
    blocks: &[RawBlock],
    predictions: &[Vec<String>],
) -> Result<()> {
    if blocks.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "{} blocks but {} predictions",
            blocks.len(),
            predictions.len()
        )));
    }
    for (block, pred) in blocks.iter().zip(predictions) {
        for sep in &block.separator_before {
            writeln!(out, "{sep}\n")?;
        }
        if block.lines.len() != pred.len() {
            return Err(Error::Dimension("prediction length differs from block".into()));
        }
        for (line, label) in block.lines.iter().zip(pred) {
            writeln!(out, "{line} {label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
