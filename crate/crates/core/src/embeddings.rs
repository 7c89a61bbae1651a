//! Word and concept embedding tables.
//!
//! Both tables share the plain-text format
//!
//! ```text
//! <count> <dim>
//! <key> <f1> ... <fdim>
//! ```
//!
//! Concept lookups never fail: a missing CUI falls back to the nearest
//! covered ancestor in the hierarchy (breadth-first, smallest CUI among ties
//! at the same depth), and then to the mean of all stored vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::error::{Error, Result};
use crate::triplets::Hierarchy;

/// Default word-vector dimension.
pub const DEFAULT_WORD_DIM: usize = 128;
/// Default concept-vector dimension.
pub const DEFAULT_CUI_DIM: usize = 1000;

/// Dense key → vector store with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        VectorTable {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Inserts or replaces the vector for `key`.
    pub fn insert(&mut self, key: impl Into<String>, vector: &[f64]) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(Error::EmbeddingRow {
                token: key,
                expected: self.dim,
                found: vector.len(),
            });
        }
        match self.index.get(&key) {
            Some(&i) => self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    /// Mean of all rows; zero vector for an empty table.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        if self.is_empty() {
            return mean;
        }
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing `<count> <dim>` header"))?
            .map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (count, dim) = match parts.as_slice() {
            [c, d] => match (parse_usize(c), parse_usize(d)) {
                (Some(c), Some(d)) => (c, d),
                _ => return Err(Error::parse(path, 1, format!("bad header `{header}`"))),
            },
            _ => return Err(Error::parse(path, 1, format!("bad header `{header}`"))),
        };
        let mut table = VectorTable::new(dim);
        let mut row = Vec::with_capacity(dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().expect("nonempty line has a field").to_string();
            row.clear();
            for f in fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(path, i + 2, format!("bad float `{f}` for `{key}`")))?;
                row.push(v);
            }
            if row.len() != dim {
                return Err(Error::EmbeddingRow {
                    token: key,
                    expected: dim,
                    found: row.len(),
                });
            }
            table.insert(key, &row)?;
        }
        if table.len() != count {
            log::warn!(
                "{}: header declares {count} rows, found {}",
                path.display(),
                table.len()
            );
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (i, key) in self.keys.iter().enumerate() {
            out.push_str(key);
            for v in self.row(i) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }
}

/// Token → vector table.
pub type WordEmbeddingTable = VectorTable;

pub fn load_word_embeddings(path: &Path) -> Result<WordEmbeddingTable> {
    VectorTable::load(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: DEFAULT_WORD_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("embeddings.dim", self.dim), ("embeddings.window", self.window)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("embeddings.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Skip-gram with negative sampling over the titles and sentences of the
/// corpus. Noise words follow the unigram distribution raised to 0.75.
pub fn train_skipgram(corpus: &CorpusStore, cfg: &SkipGramConfig) -> Result<WordEmbeddingTable> {
    cfg.validate()?;
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut sequences: Vec<&[String]> = Vec::new();
    for doc in corpus.documents() {
        if !doc.title_tokens.is_empty() {
            sequences.push(&doc.title_tokens);
        }
        for sec in &doc.sections {
            for s in &sec.sentences {
                sequences.push(&s.tokens);
            }
        }
    }
    for seq in &sequences {
        for t in seq.iter() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let ids: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();

    let mut cumulative = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for (_, c) in &vocab {
        acc += (*c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total_noise = acc;

    let dim = cfg.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..v * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; v * dim];

    let encoded: Vec<Vec<usize>> = sequences
        .iter()
        .map(|s| s.iter().map(|t| ids[t.as_str()]).collect())
        .collect();
    let total_words: usize = encoded.iter().map(Vec::len).sum();
    let total_steps = (cfg.epochs * total_words).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];

    for _ in 0..cfg.epochs {
        for seq in &encoded {
            for (i, &center) in seq.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let shrink = if cfg.window > 0 { rng.gen_range(0..cfg.window) } else { 0 };
                let w = cfg.window - shrink;
                let lo = i.saturating_sub(w);
                let hi = (i + w + 1).min(seq.len());
                for (j, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let cin = &mut input[center * dim..(center + 1) * dim];
                    for d in 0..=cfg.negatives {
                        let (target, label) = if d == 0 {
                            (context, 1.0)
                        } else {
                            let r = rng.gen::<f64>() * total_noise;
                            let t = cumulative.partition_point(|&c| c <= r).min(v - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = &mut output[target * dim..(target + 1) * dim];
                        let f: f64 = cin.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(f)) * lr;
                        for k in 0..dim {
                            grad[k] += g * out[k];
                            out[k] += g * cin[k];
                        }
                    }
                    for k in 0..dim {
                        cin[k] += grad[k];
                    }
                }
            }
        }
    }

    let mut table = VectorTable::new(dim);
    for (i, (w, _)) in vocab.iter().enumerate() {
        table.insert(*w, &input[i * dim..(i + 1) * dim])?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resolved {
    Row(usize),
    Mean,
}

/// CUI → vector table with hierarchy fallback.
#[derive(Debug)]
pub struct CuiEmbeddingTable {
    table: VectorTable,
    hierarchy: Hierarchy,
    global_mean: Vec<f64>,
    cache: RwLock<HashMap<String, Resolved>>,
}

impl Clone for CuiEmbeddingTable {
    fn clone(&self) -> Self {
        CuiEmbeddingTable::new(self.table.clone(), self.hierarchy.clone())
    }
}

impl CuiEmbeddingTable {
    pub fn new(table: VectorTable, hierarchy: Hierarchy) -> Self {
        if table.is_empty() {
            log::warn!("empty concept embedding table; every lookup returns the zero vector");
        }
        let global_mean = table.mean();
        CuiEmbeddingTable {
            table,
            hierarchy,
            global_mean,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn load(path: &Path, hierarchy: Hierarchy) -> Result<Self> {
        Ok(Self::new(VectorTable::load(path)?, hierarchy))
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn table(&self) -> &VectorTable {
        &self.table
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }

    pub fn contains(&self, cui: &str) -> bool {
        self.table.contains(cui)
    }

    /// Adds or replaces a stored vector; fallbacks are recomputed.
    pub fn insert(&mut self, cui: &str, vector: &[f64]) -> Result<()> {
        self.table.insert(cui, vector)?;
        self.global_mean = self.table.mean();
        self.cache.write().expect("cache lock").clear();
        Ok(())
    }

    /// Stored vector, else nearest covered ancestor, else the global mean.
    pub fn cui_embedding(&self, cui: &str) -> &[f64] {
        if let Some(&i) = self.table.index.get(cui) {
            return self.table.row(i);
        }
        let cached = self.cache.read().expect("cache lock").get(cui).copied();
        let resolved = match cached {
            Some(r) => r,
            None => {
                let r = self.resolve(cui);
                self.cache
                    .write()
                    .expect("cache lock")
                    .insert(cui.to_string(), r);
                r
            }
        };
        match resolved {
            Resolved::Row(i) => self.table.row(i),
            Resolved::Mean => &self.global_mean,
        }
    }

    /// Key whose vector [`Self::cui_embedding`] returns, `None` for the mean.
    pub fn resolved_key(&self, cui: &str) -> Option<&str> {
        if let Some(&i) = self.table.index.get(cui) {
            return Some(&self.table.keys[i]);
        }
        match self.resolve(cui) {
            Resolved::Row(i) => Some(&self.table.keys[i]),
            Resolved::Mean => None,
        }
    }

    fn resolve(&self, cui: &str) -> Resolved {
        let mut visited: BTreeSet<&str> = BTreeSet::from([cui]);
        let mut frontier: BTreeSet<&str> = self.hierarchy.parents(cui).collect();
        while !frontier.is_empty() {
            // BTreeSet iteration yields the smallest covered CUI first.
            if let Some(hit) = frontier.iter().find_map(|c| self.table.index.get(*c)) {
                return Resolved::Row(*hit);
            }
            visited.extend(frontier.iter().copied());
            frontier = frontier
                .iter()
                .flat_map(|c| self.hierarchy.parents(c))
                .filter(|p| !visited.contains(p))
                .collect();
        }
        Resolved::Mean
    }
}
