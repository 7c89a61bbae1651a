//! Document ingestion: tokenization, sentence splitting and the in-memory
//! corpus store.
//!
//! A document keeps the structure the sampler relies on: the title (used for
//! long-distance instances), the heading path leading to each block of text,
//! and the tokenized sentences of that block.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentences longer than this are truncated at ingestion.
pub const MAX_SENTENCE_TOKENS: usize = 128;

/// Separator placed between heading levels.
pub const HEADING_SEPARATOR: &str = "/";

const ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "dr.", "vs.", "fig."];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// Byte offsets into the text of the owning section.
    pub source_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    /// Outermost heading first. Empty for abstracts and other flat text.
    pub heading_path: Vec<String>,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title_tokens: Vec<String>,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn num_sentences(&self) -> usize {
        self.sections.iter().map(|s| s.sentences.len()).sum()
    }
}

/// Input format id for [`ingest_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// One JSON object per line: `doc_id`, `title`, `sections[{headings, text}]`.
    #[serde(rename = "jsonl-docs")]
    JsonlDocs,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl-docs" => Ok(CorpusFormat::JsonlDocs),
            other => Err(Error::config("corpus.format", format!("unknown format `{other}`"))),
        }
    }
}

/// Raw record of the `jsonl-docs` format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDocument {
    pub doc_id: String,
    pub title: String,
    pub sections: Vec<RawSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSection {
    pub headings: Vec<String>,
    pub text: String,
}

/// Immutable collection of documents in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStore {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocument(doc.doc_id.clone()));
            }
        }
        Ok(Self { documents, index })
    }

    /// Normalizes raw records as [`ingest_corpus`] would.
    pub fn from_raw(raw: &[RawDocument]) -> Result<Self> {
        Self::from_documents(raw.iter().map(Document::from).collect())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Document::num_sentences).sum()
    }

    /// Iterates `(doc, section index, sentence index, sentence)` in source order.
    pub fn sentences(&self) -> impl Iterator<Item = (&Document, usize, usize, &Sentence)> {
        self.documents.iter().flat_map(|doc| {
            doc.sections.iter().enumerate().flat_map(move |(si, sec)| {
                sec.sentences
                    .iter()
                    .enumerate()
                    .map(move |(ti, sent)| (doc, si, ti, sent))
            })
        })
    }

    /// Writes the store as JSONL, one normalized document per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.documents)
    }

    /// Reads a store previously written by [`CorpusStore::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            docs.push(doc);
        }
        Self::from_documents(docs)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Tokenizes `text`, returning lowercase tokens with their byte ranges.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let chars: Vec<(usize, char)> = text.char_indices().collect();

    let flush = |tokens: &mut Vec<(String, Range<usize>)>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            tokens.push((text[s..end].to_lowercase(), s..end));
        }
    };

    for (k, &(i, c)) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut tokens, &mut start, i);
        } else if is_word_char(c) {
            start.get_or_insert(i);
        } else {
            let next_is_word = chars.get(k + 1).is_some_and(|&(_, n)| is_word_char(n));
            if c == '-' && start.is_some() && next_is_word {
                // hyphenated word stays whole
                continue;
            }
            flush(&mut tokens, &mut start, i);
            tokens.push((c.to_lowercase().collect(), i..i + c.len_utf8()));
        }
    }
    flush(&mut tokens, &mut start, text.len());
    tokens
}

/// Lowercases, splits on whitespace and separates punctuation. Hyphenated
/// words are kept intact.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|(t, _)| t).collect()
}

fn preceding_word(text: &str, end: usize) -> &str {
    let start = text[..end]
        .rfind(char::is_whitespace)
        .map(|p| p + text[p..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    &text[start..end]
}

/// Byte ranges of the sentences of `text`, whitespace-trimmed.
pub fn split_sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut seg_start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();

    for (k, &(i, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let Some(&(_, next)) = chars.get(k + 1) else {
            continue;
        };
        if !next.is_whitespace() {
            continue;
        }
        // first non-whitespace after the delimiter
        let follower = chars[k + 1..].iter().find(|(_, ch)| !ch.is_whitespace());
        let boundary = match follower {
            None => true,
            Some(&(_, ch)) => ch.is_uppercase(),
        };
        if !boundary {
            continue;
        }
        let end = i + c.len_utf8();
        if c == '.' {
            let word = preceding_word(text, end).to_lowercase();
            if ABBREVIATIONS.contains(&word.as_str()) {
                continue;
            }
        }
        push_trimmed(text, seg_start..end, &mut spans);
        seg_start = end;
    }
    push_trimmed(text, seg_start..text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, range: Range<usize>, spans: &mut Vec<Range<usize>>) {
    let seg = &text[range.clone()];
    let lead = seg.len() - seg.trim_start().len();
    let trail = seg.len() - seg.trim_end().len();
    if lead + trail < seg.len() {
        spans.push(range.start + lead..range.end - trail);
    }
}

/// Heuristic sentence splitter with a fixed abbreviation list.
pub fn split_sentences(text: &str) -> Vec<String> {
    split_sentence_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

/// Joins headings outermost-first with a `/` token between levels.
pub fn heading_path_string(section: &Section) -> Vec<String> {
    heading_tokens(&section.heading_path)
}

pub fn heading_tokens(headings: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, h) in headings.iter().enumerate() {
        if i > 0 {
            out.push(HEADING_SEPARATOR.to_string());
        }
        out.extend(tokenize(h));
    }
    out
}

/// Tokenizes one block of text into sentences, truncating long ones.
pub fn sentences_of(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    for span in split_sentence_spans(text) {
        let mut toks = tokenize_with_spans(&text[span.clone()]);
        if toks.is_empty() {
            continue;
        }
        if toks.len() > MAX_SENTENCE_TOKENS {
            log::warn!(
                "truncating sentence of {} tokens to {}",
                toks.len(),
                MAX_SENTENCE_TOKENS
            );
            toks.truncate(MAX_SENTENCE_TOKENS);
        }
        let end = span.start + toks.last().map_or(0, |(_, r)| r.end);
        out.push(Sentence {
            tokens: toks.into_iter().map(|(t, _)| t).collect(),
            source_span: (span.start, end),
        });
    }
    out
}

impl From<&RawDocument> for Document {
    fn from(raw: &RawDocument) -> Self {
        Document {
            doc_id: raw.doc_id.clone(),
            title_tokens: tokenize(&raw.title),
            sections: raw
                .sections
                .iter()
                .map(|s| Section {
                    heading_path: s.headings.clone(),
                    sentences: sentences_of(&s.text),
                })
                .collect(),
        }
    }
}

/// Reads a corpus file, one document at a time.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusStore> {
    let CorpusFormat::JsonlDocs = format;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if seen.insert(raw.doc_id.clone(), i + 1).is_some() {
            return Err(Error::DuplicateDocument(raw.doc_id));
        }
        docs.push(Document::from(&raw));
    }
    CorpusStore::from_documents(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Diabetes causes weight loss."),
            toks(&["diabetes", "causes", "weight", "loss", "."])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("anti-CCP (assay)"),
            toks(&["anti-ccp", "(", "assay", ")"])
        );
    }

    #[test]
    fn tokenize_dangling_hyphen_is_punctuation() {
        assert_eq!(tokenize("pre- and post"), toks(&["pre", "-", "and", "post"]));
        assert_eq!(tokenize("-x"), toks(&["-", "x"]));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sentences("A is B. C is D."), vec!["A is B.", "C is D."]);
        assert_eq!(
            split_sentences("See fig. 2 for detail."),
            vec!["See fig. 2 for detail."]
        );
        assert_eq!(split_sentences("One sentence"), vec!["One sentence"]);
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn abbreviation_before_capital_does_not_split() {
        assert_eq!(
            split_sentences("Compare drugs, e.g. Aspirin and others. Then stop!"),
            vec!["Compare drugs, e.g. Aspirin and others.", "Then stop!"]
        );
        assert_eq!(split_sentences("Why? Because."), vec!["Why?", "Because."]);
        assert_eq!(split_sentences("It is 2 vs. Three."), vec!["It is 2 vs. Three."]);
    }

    #[test]
    fn heading_paths() {
        let sec = |h: &[&str]| Section {
            heading_path: h.iter().map(|s| s.to_string()).collect(),
            sentences: vec![],
        };
        assert_eq!(
            heading_path_string(&sec(&["Workup", "Laboratory Studies"])),
            toks(&["workup", "/", "laboratory", "studies"])
        );
        assert!(heading_path_string(&sec(&[])).is_empty());
        assert_eq!(heading_path_string(&sec(&["DDx"])), toks(&["ddx"]));
    }

    #[test]
    fn long_sentences_truncated_with_consistent_span() {
        let text: String = (0..200).map(|i| format!("w{i} ")).collect();
        let sents = sentences_of(&text);
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].tokens.len(), MAX_SENTENCE_TOKENS);
        let (s, e) = sents[0].source_span;
        assert_eq!(tokenize(&text[s..e]), sents[0].tokens);
    }

    #[test]
    fn duplicate_document_rejected() {
        let doc = Document {
            doc_id: "d".into(),
            title_tokens: vec![],
            sections: vec![],
        };
        assert!(matches!(
            CorpusStore::from_documents(vec![doc.clone(), doc]),
            Err(Error::DuplicateDocument(_))
        ));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokens_have_no_whitespace(text in "[a-zA-Z0-9 .,;()\\-\t\n]{0,80}") {
                for t in tokenize(&text) {
                    prop_assert!(!t.is_empty());
                    prop_assert!(!t.chars().any(char::is_whitespace));
                }
            }

            #[test]
            fn sentence_spans_round_trip(text in "([A-Za-z]{1,6}[ ,\\-]?){0,12}([.!?] ){0,1}([A-Za-z]{1,6} ){0,8}\\.?") {
                for sent in sentences_of(&text) {
                    let (s, e) = sent.source_span;
                    prop_assert_eq!(tokenize(&text[s..e]), sent.tokens.clone());
                }
                let joined: String = split_sentences(&text).concat();
                let squeeze = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
                prop_assert_eq!(squeeze(&joined), squeeze(&text));
            }
        }
    }
}
