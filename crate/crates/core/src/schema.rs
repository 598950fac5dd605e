//! Output label space: hierarchical tags, segment encodings and the
//! allocation of latent states to labels.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The label that marks tokens outside every segment.
pub const OUTSIDE: &str = "O";

/// Segment encoding used by a label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Iob,
    Iobes,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iob" | "bio" | "iob2" => Ok(Scheme::Iob),
            "iobes" | "bioes" => Ok(Scheme::Iobes),
            _ => Err(Error::Config(format!("unknown tagging scheme {s:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Iob => f.write_str("iob"),
            Scheme::Iobes => f.write_str("iobes"),
        }
    }
}

/// Position of a token within its segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Outside,
    Begin,
    Inside,
    End,
    Single,
    /// A label without a boundary prefix; consecutive equal labels form one segment.
    Plain,
}

/// A parsed label: boundary marker plus hierarchical segment path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tag {
    pub boundary: Boundary,
    pub path: Vec<String>,
}

impl Tag {
    pub fn parse(raw: &str) -> Result<Self> {
        if raw == OUTSIDE {
            return Ok(Tag {
                boundary: Boundary::Outside,
                path: Vec::new(),
            });
        }
        let (boundary, rest) = match raw.split_once('-') {
            Some(("B", rest)) => (Boundary::Begin, rest),
            Some(("I", rest)) => (Boundary::Inside, rest),
            Some(("E", rest)) => (Boundary::End, rest),
            Some(("S", rest)) => (Boundary::Single, rest),
            _ => (Boundary::Plain, raw),
        };
        let path = parse_hierarchical_label(rest)?;
        if path.is_empty() {
            return Err(Error::MalformedLabel {
                label: raw.to_string(),
                reason: "segment label without a type",
            });
        }
        Ok(Tag { boundary, path })
    }

    /// Full hierarchical type, e.g. `venue/editor/person`. Empty for `O`.
    pub fn kind(&self) -> String {
        self.path.join("/")
    }

    pub fn is_outside(&self) -> bool {
        self.boundary == Boundary::Outside
    }
}

/// Splits a hierarchical label such as `venue/editor/person/person-last`
/// into its path segments. The outside label has an empty path.
pub fn parse_hierarchical_label(raw: &str) -> Result<Vec<String>> {
    if raw.is_empty() {
        return Err(Error::MalformedLabel {
            label: raw.to_string(),
            reason: "empty label",
        });
    }
    if raw == OUTSIDE {
        return Ok(Vec::new());
    }
    raw.split('/')
        .map(|seg| {
            if seg.is_empty() || seg.chars().any(char::is_whitespace) {
                Err(Error::MalformedLabel {
                    label: raw.to_string(),
                    reason: "empty or blank path segment",
                })
            } else {
                Ok(seg.to_string())
            }
        })
        .collect()
}

/// The N output labels in canonical order, with their parsed tags and
/// corpus entity counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct LabelSchema {
    labels: Vec<String>,
    tags: Vec<Tag>,
    entity_counts: Vec<u64>,
    scheme: Scheme,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    labels: Vec<String>,
    entity_counts: Vec<u64>,
    scheme: Scheme,
}

impl TryFrom<SchemaRepr> for LabelSchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        LabelSchema::new(r.labels, r.entity_counts, r.scheme)
    }
}

impl From<LabelSchema> for SchemaRepr {
    fn from(s: LabelSchema) -> Self {
        SchemaRepr {
            labels: s.labels,
            entity_counts: s.entity_counts,
            scheme: s.scheme,
        }
    }
}

impl LabelSchema {
    pub fn new(labels: Vec<String>, entity_counts: Vec<u64>, scheme: Scheme) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Schema("a schema needs at least one label".into()));
        }
        if labels.len() != entity_counts.len() {
            return Err(Error::Dimension(format!(
                "{} labels but {} entity counts",
                labels.len(),
                entity_counts.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        let mut tags = Vec::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            let tag = Tag::parse(label)?;
            if scheme == Scheme::Iob && matches!(tag.boundary, Boundary::End | Boundary::Single) {
                return Err(Error::Schema(format!(
                    "label {label:?} is not valid under the IOB scheme"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate label {label:?}")));
            }
            tags.push(tag);
        }
        Ok(LabelSchema {
            labels,
            tags,
            entity_counts,
            scheme,
            index,
        })
    }

    /// Infers the schema from gold label sequences. `O` comes first, then the
    /// observed labels sorted by entity type and boundary. Each label is
    /// credited with its number of occurrences.
    pub fn from_sequences<'a, I, S>(sequences: I, scheme: Scheme) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut seen: HashMap<String, (Tag, u64)> = HashMap::new();
        for seq in sequences {
            for label in seq.iter().map(AsRef::as_ref) {
                match seen.get_mut(label) {
                    Some((_, n)) => *n += 1,
                    None => {
                        seen.insert(label.to_string(), (Tag::parse(label)?, 1));
                    }
                }
            }
        }
        let outside = seen.remove(OUTSIDE).map_or(0, |(_, n)| n);
        let mut tagged: Vec<(String, (Tag, u64))> = seen.into_iter().collect();
        tagged.sort_by(|(la, (ta, _)), (lb, (tb, _))| {
            (ta.kind(), boundary_rank(ta.boundary), la).cmp(&(
                tb.kind(),
                boundary_rank(tb.boundary),
                lb,
            ))
        });
        let mut labels = vec![OUTSIDE.to_string()];
        let mut counts = vec![outside];
        for (label, (_, n)) in tagged {
            labels.push(label);
            counts.push(n);
        }
        LabelSchema::new(labels, counts, scheme)
    }

    /// Reads a plain-text label list: one label per line in canonical order,
    /// optionally followed by whitespace and an entity count (default 1).
    pub fn from_label_list<R: std::io::BufRead>(reader: R, scheme: Scheme) -> Result<Self> {
        let mut labels = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(label) = fields.next() else { continue };
            let count = match fields.next() {
                None => 1,
                Some(c) => c.parse().map_err(|_| Error::Format {
                    line: lineno + 1,
                    message: format!("bad entity count {c:?}"),
                })?,
            };
            if fields.next().is_some() {
                return Err(Error::Format {
                    line: lineno + 1,
                    message: "expected `label [count]`".into(),
                });
            }
            labels.push(label.to_string());
            counts.push(count);
        }
        LabelSchema::new(labels, counts, scheme)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn tag(&self, i: usize) -> &Tag {
        &self.tags[i]
    }

    pub fn hierarchy(&self, i: usize) -> &[String] {
        &self.tags[i].path
    }

    pub fn entity_counts(&self) -> &[u64] {
        &self.entity_counts
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index_of(l.as_ref())).collect()
    }

    /// Whether label index `next` may directly follow label index `prev`.
    pub fn transition_allowed(&self, prev: usize, next: usize) -> bool {
        let (p, n) = (&self.tags[prev], &self.tags[next]);
        let continues = matches!(p.boundary, Boundary::Begin | Boundary::Inside) && p.path == n.path;
        match self.scheme {
            Scheme::Iob => match n.boundary {
                Boundary::Inside => continues,
                _ => true,
            },
            Scheme::Iobes => match n.boundary {
                Boundary::Inside | Boundary::End => continues,
                _ => !matches!(p.boundary, Boundary::Begin | Boundary::Inside),
            },
        }
    }

    /// Whether a sequence may open with this label.
    pub fn can_start(&self, label: usize) -> bool {
        !matches!(self.tags[label].boundary, Boundary::Inside | Boundary::End)
    }

    /// Whether a sequence may close on this label.
    pub fn can_end(&self, label: usize) -> bool {
        match self.scheme {
            Scheme::Iob => true,
            Scheme::Iobes => !matches!(self.tags[label].boundary, Boundary::Begin | Boundary::Inside),
        }
    }

    /// Checks a whole label-index sequence against the encoding rules.
    pub fn is_valid_sequence(&self, labels: &[usize]) -> bool {
        match (labels.first(), labels.last()) {
            (Some(&first), Some(&last)) => {
                self.can_start(first)
                    && self.can_end(last)
                    && labels.windows(2).all(|w| self.transition_allowed(w[0], w[1]))
            }
            _ => true,
        }
    }
}

fn boundary_rank(b: Boundary) -> u8 {
    match b {
        Boundary::Outside => 0,
        Boundary::Begin => 1,
        Boundary::Inside => 2,
        Boundary::End => 3,
        Boundary::Single => 4,
        Boundary::Plain => 5,
    }
}

/// Label-level transition check by name.
pub fn iob_transition_allowed(prev: &str, next: &str, schema: &LabelSchema) -> Result<bool> {
    let p = schema.index_of(prev)?;
    let n = schema.index_of(next)?;
    Ok(schema.transition_allowed(p, n))
}

/// The M latent states and their many-to-one map onto labels. Each label
/// owns a contiguous, non-empty range of states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StateSpaceRepr", into = "StateSpaceRepr")]
pub struct StateSpace {
    ranges: Vec<Range<usize>>,
    state_to_label: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StateSpaceRepr {
    states_per_label: Vec<usize>,
}

impl TryFrom<StateSpaceRepr> for StateSpace {
    type Error = Error;

    fn try_from(r: StateSpaceRepr) -> Result<Self> {
        StateSpace::from_sizes(&r.states_per_label)
    }
}

impl From<StateSpace> for StateSpaceRepr {
    fn from(s: StateSpace) -> Self {
        StateSpaceRepr {
            states_per_label: s.ranges.iter().map(|r| r.len()).collect(),
        }
    }
}

impl StateSpace {
    /// Builds the state space from per-label state counts, laid out in label order.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Schema("state space needs at least one label".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Schema(format!("label {i} owns no hidden states")));
        }
        let mut ranges = Vec::with_capacity(sizes.len());
        let mut state_to_label = Vec::with_capacity(sizes.iter().sum());
        let mut start = 0;
        for (label, &n) in sizes.iter().enumerate() {
            ranges.push(start..start + n);
            state_to_label.extend(std::iter::repeat_n(label, n));
            start += n;
        }
        Ok(StateSpace {
            ranges,
            state_to_label,
        })
    }

    /// One state per label: the plain linear-chain CRF.
    pub fn one_per_label(n_labels: usize) -> Result<Self> {
        Self::from_sizes(&vec![1; n_labels])
    }

    pub fn num_states(&self) -> usize {
        self.state_to_label.len()
    }

    pub fn num_labels(&self) -> usize {
        self.ranges.len()
    }

    pub fn label_of(&self, state: usize) -> usize {
        self.state_to_label[state]
    }

    pub fn state_to_label(&self) -> &[usize] {
        &self.state_to_label
    }

    pub fn states_of(&self, label: usize) -> Range<usize> {
        self.ranges[label].clone()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

/// Distributes `m` hidden states over the labels in proportion to their
/// entity counts.
///
/// Labels whose proportional share falls below one are pinned to a single
/// state and the rest is re-apportioned among the remaining labels. The
/// remaining shares are rounded by largest remainder, with ties going to the
/// earlier label. Arithmetic is exact integer arithmetic.
pub fn allocate_states(schema: &LabelSchema, m: usize) -> Result<StateSpace> {
    let n = schema.len();
    if m < n {
        return Err(Error::InfeasibleAllocation {
            states: m,
            labels: n,
        });
    }
    let counts = schema.entity_counts();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Schema(
            "entity counts sum to zero; cannot allocate proportionally".into(),
        ));
    }

    let mut pinned = vec![false; n];
    loop {
        let budget = (m - pinned.iter().filter(|&&p| p).count()) as u128;
        let total: u128 = (0..n).filter(|&i| !pinned[i]).map(|i| counts[i] as u128).sum();
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && (total == 0 || budget * (counts[i] as u128) < total) {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut sizes = vec![1usize; n];
    let active: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
    if !active.is_empty() {
        let budget = (m - (n - active.len())) as u128;
        let total: u128 = active.iter().map(|&i| counts[i] as u128).sum();
        let mut remainders = Vec::with_capacity(active.len());
        let mut assigned = 0u128;
        for &i in &active {
            let numer = budget * counts[i] as u128;
            sizes[i] = (numer / total) as usize;
            assigned += numer / total;
            remainders.push((numer % total, i));
        }
        // Largest remainder first; equal remainders keep label order.
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take((budget - assigned) as usize) {
            sizes[i] += 1;
        }
    }
    StateSpace::from_sizes(&sizes)
}
