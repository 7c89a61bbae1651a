//! Distant-supervision sample generation.
//!
//! Positives come from sentences (and title/sentence pairs) that mention
//! both entities of a known triplet. Negatives come in two flavours: spliced
//! sentences that keep a positive's frame but take the middle text from an
//! unrelated sentence, and naturally occurring pairs of irrelevant entities
//! ranked by embedding similarity to the positives.

mod dataset;
mod negative;
mod positive;

use serde::{Deserialize, Serialize};

pub use dataset::{assemble_datasets, Dataset, NegativeKind, Split, DATASET_FORMAT_VERSION};
pub use negative::{
    bag_embedding, build_negative_pool, cosine_similarity, generate_type1_negatives,
    select_type2_negatives, sentence_embedding,
};
pub use positive::generate_positive_bags;

use crate::error::{Error, Result};
use crate::lexicon::Mention;

/// Writes bags as JSON lines.
pub fn save_bags(path: &std::path::Path, bags: &[Bag]) -> Result<()> {
    crate::io::write_jsonl(path, bags)
}

pub fn load_bags(path: &std::path::Path) -> Result<Vec<Bag>> {
    crate::io::read_jsonl(path)
}

/// Prefix of the reserved semantic-group mask tokens.
pub const MASK_PREFIX: &str = "[GRP:";

pub fn mask_token(group: &str) -> String {
    format!("{MASK_PREFIX}{group}]")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Sentence,
    Title,
}

/// An entity occurrence inside an instance, with its semantic group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub cui: String,
    pub group: String,
    pub location: Location,
    pub start: usize,
    pub end: usize,
}

impl EntityRef {
    pub(crate) fn in_sentence(m: &Mention, group: &str) -> Self {
        EntityRef {
            cui: m.cui.clone(),
            group: group.to_string(),
            location: Location::Sentence,
            start: m.start,
            end: m.end,
        }
    }

    pub(crate) fn in_title(m: &Mention, group: &str) -> Self {
        EntityRef {
            location: Location::Title,
            ..Self::in_sentence(m, group)
        }
    }
}

/// `[head] [e1] [middle] [e2] [tail]`; any part may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Decomposition {
    pub head: Vec<String>,
    pub e1: Vec<String>,
    pub middle: Vec<String>,
    pub e2: Vec<String>,
    pub tail: Vec<String>,
}

impl Decomposition {
    pub fn concat(&self) -> Vec<String> {
        [&self.head, &self.e1, &self.middle, &self.e2, &self.tail]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }
}

/// Splits a sentence around two non-overlapping spans; the earlier span is
/// treated as E1.
pub fn decompose(
    tokens: &[String],
    a: (usize, usize),
    b: (usize, usize),
) -> Result<Decomposition> {
    let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    if first.1 > second.0 || first.0 >= first.1 || second.0 >= second.1 || second.1 > tokens.len() {
        return Err(Error::OverlappingSpans(a.0, a.1, b.0, b.1));
    }
    Ok(Decomposition {
        head: tokens[..first.0].to_vec(),
        e1: tokens[first.0..first.1].to_vec(),
        middle: tokens[first.1..second.0].to_vec(),
        e2: tokens[second.0..second.1].to_vec(),
        tail: tokens[second.1..].to_vec(),
    })
}

/// One labeled occurrence of an entity pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub doc_id: String,
    pub section: usize,
    pub sentence: usize,
    pub title_tokens: Vec<String>,
    pub heading_tokens: Vec<String>,
    pub sentence_tokens: Vec<String>,
    /// Surface-first entity; the title entity for long-distance instances.
    pub e1: EntityRef,
    pub e2: EntityRef,
    pub distance: Distance,
    pub decomposition: Decomposition,
}

/// Token sequences of an instance with entity spans replaced by group masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInstance {
    pub title: Vec<String>,
    pub sentence: Vec<String>,
    pub headings: Vec<String>,
}

fn replace_spans(tokens: &[String], spans: &mut [(usize, usize, String)]) -> Vec<String> {
    spans.sort_by_key(|s| s.0);
    let mut out = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for (start, end, tok) in spans.iter() {
        out.extend_from_slice(&tokens[pos..*start]);
        out.push(tok.clone());
        pos = *end;
    }
    out.extend_from_slice(&tokens[pos..]);
    out
}

impl Instance {
    /// Replaces entity spans with `[GRP:<group>]` tokens.
    pub fn masked(&self) -> MaskedInstance {
        let mut title_spans = Vec::new();
        let mut sentence_spans = Vec::new();
        for e in [&self.e1, &self.e2] {
            let span = (e.start, e.end, mask_token(&e.group));
            match e.location {
                Location::Title => title_spans.push(span),
                Location::Sentence => sentence_spans.push(span),
            }
        }
        MaskedInstance {
            title: replace_spans(&self.title_tokens, &mut title_spans),
            sentence: replace_spans(&self.sentence_tokens, &mut sentence_spans),
            headings: self.heading_tokens.clone(),
        }
    }
}

/// Masked sentence tokens of an instance.
pub fn mask_instance(instance: &Instance) -> Vec<String> {
    instance.masked().sentence
}

/// All instances of one entity pair under one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    pub head_cui: String,
    pub tail_cui: String,
    pub label: String,
    pub instances: Vec<Instance>,
}

impl Bag {
    /// Unordered entity pair, smaller CUI first.
    pub fn pair_key(&self) -> (String, String) {
        unordered(&self.head_cui, &self.tail_cui)
    }

    pub fn key(&self) -> (String, String, String) {
        (
            self.head_cui.clone(),
            self.label.clone(),
            self.tail_cui.clone(),
        )
    }

    pub fn is_negative(&self) -> bool {
        self.label == crate::triplets::NA
    }
}

pub(crate) fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Picks the closest pair of mentions, one from each list. Ties go to the
/// leftmost pair. Returns (earlier, later).
pub(crate) fn nearest_pair<'a>(xs: &[&'a Mention], ys: &[&'a Mention]) -> Option<(&'a Mention, &'a Mention)> {
    type Candidate<'m> = ((usize, usize, usize), (&'m Mention, &'m Mention));
    let mut best: Option<Candidate> = None;
    for &x in xs {
        for &y in ys {
            if x.start < y.end && y.start < x.end {
                continue;
            }
            let (first, second) = if x.start < y.start { (x, y) } else { (y, x) };
            let key = (second.start - first.end, first.start, second.start);
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, (first, second)));
            }
        }
    }
    best.map(|(_, pair)| pair)
}
