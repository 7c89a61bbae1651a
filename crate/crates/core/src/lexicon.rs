//! Concept dictionary and token-level multi-pattern mention matching.
//!
//! Terms are tokenized with the corpus tokenizer and compiled into a trie
//! keyed by token. Matching is leftmost-longest and non-overlapping: at each
//! position the longest term starting there wins, and the scan resumes after
//! it. When several concepts share the winning term, the smallest CUI is
//! reported.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Declared coarse semantic groups.
pub const SEMANTIC_GROUPS: &[&str] = &[
    "ACTI", "ANAT", "CHEM", "CONC", "DEVI", "DISO", "GENE", "GEOG", "LIVB", "OBJC", "OCCU", "ORGA",
    "PHEN", "PHYS", "PROC",
];

pub fn is_semantic_group(group: &str) -> bool {
    SEMANTIC_GROUPS.contains(&group)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: String,
    pub preferred_name: String,
    pub synonyms: Vec<String>,
    pub semantic_type: String,
    pub semantic_group: String,
}

impl Concept {
    pub fn new(
        cui: impl Into<String>,
        preferred_name: impl Into<String>,
        semantic_type: impl Into<String>,
        semantic_group: impl Into<String>,
    ) -> Self {
        Concept {
            cui: cui.into(),
            preferred_name: preferred_name.into(),
            synonyms: Vec::new(),
            semantic_type: semantic_type.into(),
            semantic_group: semantic_group.into(),
        }
    }

    pub fn with_synonyms<I, S>(mut self, synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.synonyms = synonyms.into_iter().map(Into::into).collect();
        self
    }

    /// Preferred name first, then synonyms.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.preferred_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }

    pub fn name_tokens(&self) -> Vec<String> {
        tokenize(&self.preferred_name)
    }
}

/// A concept occurrence over `tokens[start..end]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub cui: String,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<String, usize>,
    /// Smallest CUI among concepts whose term ends here.
    cui: Option<String>,
}

#[derive(Debug, Clone)]
struct TermTrie {
    nodes: Vec<TrieNode>,
}

impl TermTrie {
    fn new() -> Self {
        TermTrie {
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, tokens: &[String], cui: &str) {
        let mut node = 0;
        for tok in tokens {
            node = match self.nodes[node].children.get(tok) {
                Some(&next) => next,
                None => {
                    let next = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(tok.clone(), next);
                    next
                }
            };
        }
        let slot = &mut self.nodes[node].cui;
        match slot {
            Some(existing) if existing.as_str() <= cui => {}
            _ => *slot = Some(cui.to_string()),
        }
    }

    /// Longest term starting at `start`: (end, cui).
    fn longest_at<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Option<(usize, &str)> {
        let mut node = 0;
        let mut best = None;
        for (i, tok) in tokens.iter().enumerate().skip(start) {
            match self.nodes[node].children.get(tok.as_ref()) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(cui) = &self.nodes[node].cui {
                best = Some((i + 1, cui.as_str()));
            }
        }
        best
    }
}

/// Immutable concept dictionary with a compiled matcher.
#[derive(Debug, Clone)]
pub struct Lexicon {
    concepts: Vec<Concept>,
    by_cui: HashMap<String, usize>,
    /// Concept indices per group, sorted by CUI.
    by_group: BTreeMap<String, Vec<usize>>,
    trie: TermTrie,
}

impl Lexicon {
    pub fn from_concepts(concepts: Vec<Concept>) -> Result<Self> {
        let mut by_cui = HashMap::with_capacity(concepts.len());
        let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut trie = TermTrie::new();
        for (i, c) in concepts.iter().enumerate() {
            if !is_semantic_group(&c.semantic_group) {
                return Err(Error::UnknownSemanticGroup {
                    cui: c.cui.clone(),
                    group: c.semantic_group.clone(),
                });
            }
            if by_cui.insert(c.cui.clone(), i).is_some() {
                return Err(Error::DuplicateConcept(c.cui.clone()));
            }
            by_group.entry(c.semantic_group.clone()).or_default().push(i);
            for term in c.terms() {
                let toks = tokenize(term);
                if !toks.is_empty() {
                    trie.insert(&toks, &c.cui);
                }
            }
        }
        for members in by_group.values_mut() {
            members.sort_by(|&a, &b| concepts[a].cui.cmp(&concepts[b].cui));
        }
        Ok(Lexicon {
            concepts,
            by_cui,
            by_group,
            trie,
        })
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, cui: &str) -> Option<&Concept> {
        self.by_cui.get(cui).map(|&i| &self.concepts[i])
    }

    pub fn group_of(&self, cui: &str) -> Option<&str> {
        self.get(cui).map(|c| c.semantic_group.as_str())
    }

    /// Concepts of one semantic group, ordered by CUI.
    pub fn group_members(&self, group: &str) -> Vec<&Concept> {
        self.by_group
            .get(group)
            .map(|ix| ix.iter().map(|&i| &self.concepts[i]).collect())
            .unwrap_or_default()
    }

    /// Leftmost-longest non-overlapping mentions, sorted by start.
    pub fn find_mentions<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let lowered: Vec<String>;
        let needs_lower = tokens
            .iter()
            .any(|t| t.as_ref().chars().any(char::is_uppercase));
        let view: Vec<&str> = if needs_lower {
            lowered = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
            lowered.iter().map(String::as_str).collect()
        } else {
            tokens.iter().map(AsRef::as_ref).collect()
        };

        let mut out = Vec::new();
        let mut i = 0;
        while i < view.len() {
            match self.trie.longest_at(&view, i) {
                Some((end, cui)) => {
                    out.push(Mention {
                        cui: cui.to_string(),
                        start: i,
                        end,
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Free-function form of [`Lexicon::find_mentions`].
pub fn find_mentions<S: AsRef<str>>(sentence_tokens: &[S], lexicon: &Lexicon) -> Vec<Mention> {
    lexicon.find_mentions(sentence_tokens)
}

#[derive(Debug, Deserialize)]
struct LexiconRow {
    cui: String,
    preferred_name: String,
    semantic_type: String,
    semantic_group: String,
    synonyms: String,
}

/// Loads a lexicon TSV with header
/// `cui, preferred_name, semantic_type, semantic_group, synonyms`.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let mut reader = crate::io::tsv_reader(path)?;
    let mut concepts = Vec::new();
    for rec in reader.deserialize::<LexiconRow>() {
        let row = rec.map_err(|e| crate::io::csv_error(path, e))?;
        let synonyms = row
            .synonyms
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        concepts.push(Concept {
            cui: row.cui,
            preferred_name: row.preferred_name,
            synonyms,
            semantic_type: row.semantic_type,
            semantic_group: row.semantic_group,
        });
    }
    Lexicon::from_concepts(concepts)
}

/// Writes a lexicon in the TSV format read by [`load_lexicon`].
pub fn save_lexicon(lexicon: &Lexicon, path: &Path) -> Result<()> {
    let mut text = String::from("cui\tpreferred_name\tsemantic_type\tsemantic_group\tsynonyms\n");
    for c in lexicon.concepts() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            c.cui,
            c.preferred_name,
            c.semantic_type,
            c.semantic_group,
            c.synonyms.join("|")
        ));
    }
    crate::io::write_atomic(path, text.as_bytes())
}
