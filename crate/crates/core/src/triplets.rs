//! Relation triplets: schema, loading, extraction from list pages,
//! hierarchy-based extension and schema filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::lexicon::{is_semantic_group, Lexicon};

/// Reserved negative label.
pub const NA: &str = "NA";

/// Default cap on list-entry length for extraction.
pub const DEFAULT_MAX_ENTRY_TOKENS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub label: String,
    pub directed: bool,
    /// Allowed (head group, tail group) pairs.
    pub slots: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_of: Option<String>,
}

impl RelationDef {
    pub fn undirected(label: &str, head: &str, tail: &str) -> Self {
        RelationDef {
            label: label.into(),
            directed: false,
            slots: vec![(head.into(), tail.into())],
            inverse_of: None,
        }
    }

    pub fn directed(label: &str, head: &str, tail: &str, inverse_of: Option<&str>) -> Self {
        RelationDef {
            label: label.into(),
            directed: true,
            slots: vec![(head.into(), tail.into())],
            inverse_of: inverse_of.map(Into::into),
        }
    }
}

/// Relation labels with direction, slot constraints and inverses. `NA` is
/// always label index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RelationDef>", into = "Vec<RelationDef>")]
pub struct RelationSchema {
    relations: Vec<RelationDef>,
}

impl TryFrom<Vec<RelationDef>> for RelationSchema {
    type Error = Error;

    fn try_from(defs: Vec<RelationDef>) -> Result<Self> {
        RelationSchema::new(defs)
    }
}

impl From<RelationSchema> for Vec<RelationDef> {
    fn from(s: RelationSchema) -> Self {
        s.relations
    }
}

impl RelationSchema {
    pub fn new(relations: Vec<RelationDef>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &relations {
            if r.label == NA {
                return Err(Error::ReservedLabel);
            }
            if !seen.insert(r.label.as_str()) {
                return Err(Error::Schema(format!("duplicate label `{}`", r.label)));
            }
            if r.slots.is_empty() {
                return Err(Error::Schema(format!("label `{}` has no slot groups", r.label)));
            }
            for (h, t) in &r.slots {
                for g in [h, t] {
                    if !is_semantic_group(g) {
                        return Err(Error::Schema(format!(
                            "label `{}` uses unknown semantic group `{g}`",
                            r.label
                        )));
                    }
                }
            }
            if !r.directed && r.inverse_of.is_some() {
                return Err(Error::Schema(format!(
                    "undirected label `{}` cannot declare an inverse",
                    r.label
                )));
            }
        }
        for r in &relations {
            if let Some(inv) = &r.inverse_of {
                let other = relations
                    .iter()
                    .find(|o| &o.label == inv)
                    .ok_or_else(|| Error::Schema(format!("inverse `{inv}` of `{}` is not declared", r.label)))?;
                if other.inverse_of.as_deref() != Some(r.label.as_str()) {
                    return Err(Error::Schema(format!(
                        "inverse of `{}` is `{inv}` but `{inv}` does not point back",
                        r.label
                    )));
                }
            }
        }
        Ok(RelationSchema { relations })
    }

    /// DDx (undirected), MC/MBCB (mutual inverses) over disorders, and IN
    /// from disorders to anatomy.
    pub fn medical_default() -> Self {
        RelationSchema::new(vec![
            RelationDef::undirected("DDx", "DISO", "DISO"),
            RelationDef::directed("MC", "DISO", "DISO", Some("MBCB")),
            RelationDef::directed("MBCB", "DISO", "DISO", Some("MC")),
            RelationDef::directed("IN", "DISO", "ANAT", None),
        ])
        .expect("default schema is valid")
    }

    pub fn relations(&self) -> &[RelationDef] {
        &self.relations
    }

    pub fn get(&self, label: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.label == label)
    }

    /// All labels, `NA` first.
    pub fn labels(&self) -> Vec<&str> {
        std::iter::once(NA)
            .chain(self.relations.iter().map(|r| r.label.as_str()))
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.relations.len() + 1
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        if label == NA {
            return Some(0);
        }
        self.relations.iter().position(|r| r.label == label).map(|i| i + 1)
    }

    pub fn label_at(&self, index: usize) -> Option<&str> {
        match index {
            0 => Some(NA),
            i => self.relations.get(i - 1).map(|r| r.label.as_str()),
        }
    }

    /// Every semantic group used by some slot.
    pub fn slot_groups(&self) -> BTreeSet<&str> {
        self.relations
            .iter()
            .flat_map(|r| r.slots.iter().flat_map(|(h, t)| [h.as_str(), t.as_str()]))
            .collect()
    }

    pub fn allows(&self, label: &str, head_group: &str, tail_group: &str) -> bool {
        self.get(label).is_some_and(|r| {
            r.slots
                .iter()
                .any(|(h, t)| h == head_group && t == tail_group)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head_cui: String,
    pub relation: String,
    pub tail_cui: String,
    pub source: String,
}

impl Triplet {
    pub fn new(head: &str, relation: &str, tail: &str, source: &str) -> Self {
        Triplet {
            head_cui: head.into(),
            relation: relation.into(),
            tail_cui: tail.into(),
            source: source.into(),
        }
    }

    fn key(&self) -> (String, String, String) {
        (
            self.head_cui.clone(),
            self.relation.clone(),
            self.tail_cui.clone(),
        )
    }
}

/// Deduplicated triplets ordered by (head, relation, tail). The first
/// source seen for a triple is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletStore {
    entries: BTreeMap<(String, String, String), String>,
}

impl TripletStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false for duplicates and self-loops.
    pub fn insert(&mut self, t: Triplet) -> bool {
        if t.head_cui == t.tail_cui {
            return false;
        }
        let key = t.key();
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, t.source);
        true
    }

    pub fn contains(&self, head: &str, relation: &str, tail: &str) -> bool {
        self.entries
            .contains_key(&(head.to_string(), relation.to_string(), tail.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.entries.iter().map(|((h, r, t), s)| Triplet {
            head_cui: h.clone(),
            relation: r.clone(),
            tail_cui: t.clone(),
            source: s.clone(),
        })
    }

    pub fn to_vec(&self) -> Vec<Triplet> {
        self.iter().collect()
    }
}

impl FromIterator<Triplet> for TripletStore {
    fn from_iter<I: IntoIterator<Item = Triplet>>(iter: I) -> Self {
        let mut store = TripletStore::new();
        store.extend(iter);
        store
    }
}

impl Extend<Triplet> for TripletStore {
    fn extend<I: IntoIterator<Item = Triplet>>(&mut self, iter: I) {
        for t in iter {
            self.insert(t);
        }
    }
}

#[derive(Debug, Deserialize)]
struct TripletRow {
    head_cui: String,
    relation: String,
    tail_cui: String,
    #[serde(default)]
    source: String,
}

/// Loads a triplet TSV (`head_cui, relation, tail_cui, source`). Self-loops
/// are skipped and reported in the returned warnings.
pub fn load_triplets(path: &Path, schema: &RelationSchema) -> Result<(TripletStore, Vec<String>)> {
    let mut reader = crate::io::tsv_reader(path)?;
    let mut store = TripletStore::new();
    let mut warnings = Vec::new();
    for rec in reader.deserialize::<TripletRow>() {
        let row = rec.map_err(|e| crate::io::csv_error(path, e))?;
        if row.relation == NA {
            return Err(Error::ReservedLabel);
        }
        if schema.get(&row.relation).is_none() {
            return Err(Error::UnknownRelation(row.relation));
        }
        if row.head_cui == row.tail_cui {
            let msg = format!("skipping self-loop triplet on `{}`", row.head_cui);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        store.insert(Triplet {
            head_cui: row.head_cui,
            relation: row.relation,
            tail_cui: row.tail_cui,
            source: row.source,
        });
    }
    Ok((store, warnings))
}

pub fn save_triplets(store: &TripletStore, path: &Path) -> Result<()> {
    let mut text = String::from("head_cui\trelation\ttail_cui\tsource\n");
    for t in store.iter() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            t.head_cui, t.relation, t.tail_cui, t.source
        ));
    }
    crate::io::write_atomic(path, text.as_bytes())
}

/// Child → parent edges, unioned over all hierarchy relation names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Hierarchy {
    parents: BTreeMap<String, BTreeSet<String>>,
}

impl Hierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges<I, S>(edges: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut h = Hierarchy::new();
        for (c, p) in edges {
            h.add_edge(c, p);
        }
        h
    }

    pub fn add_edge(&mut self, child: impl Into<String>, parent: impl Into<String>) {
        self.parents
            .entry(child.into())
            .or_default()
            .insert(parent.into());
    }

    pub fn parents(&self, cui: &str) -> impl Iterator<Item = &str> {
        self.parents
            .get(cui)
            .into_iter()
            .flat_map(|ps| ps.iter().map(String::as_str))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parents
            .iter()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (c.as_str(), p.as_str())))
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Errors with one cycle if the graph is not a DAG.
    pub fn check_acyclic(&self) -> Result<()> {
        // Kahn's algorithm over child -> parent edges; in-degree = child count.
        let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for (c, p) in self.edges() {
            indeg.entry(c).or_insert(0);
            *indeg.entry(p).or_insert(0) += 1;
            children.entry(p).or_default().push(c);
        }
        let mut queue: VecDeque<&str> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        while let Some(n) = queue.pop_front() {
            for p in self.parents(n) {
                let d = indeg.get_mut(p).expect("parent indexed");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(p);
                }
            }
            indeg.remove(n);
        }
        let Some((&start, _)) = indeg.iter().next() else {
            return Ok(());
        };
        // Every remaining node has a remaining child; walk child-ward until a repeat.
        let mut path = vec![start];
        let mut pos: HashMap<&str, usize> = HashMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let next = children[cur]
                .iter()
                .copied()
                .find(|c| indeg.contains_key(c))
                .expect("remaining node has a remaining child");
            if let Some(&i) = pos.get(next) {
                let mut cycle: Vec<String> = path[i..].iter().rev().map(|s| s.to_string()).collect();
                cycle.push(cycle[0].clone());
                return Err(Error::Cycle(cycle));
            }
            pos.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }

    /// All strict ancestors of `cui`.
    pub fn ancestors(&self, cui: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = self.parents(cui).collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.to_string()) {
                queue.extend(self.parents(n));
            }
        }
        seen
    }
}

#[derive(Debug, Deserialize)]
struct HierarchyRow {
    child_cui: String,
    parent_cui: String,
}

/// Loads a hierarchy TSV (`child_cui, parent_cui`).
pub fn load_hierarchy(path: &Path) -> Result<Hierarchy> {
    let mut reader = crate::io::tsv_reader(path)?;
    let mut h = Hierarchy::new();
    for rec in reader.deserialize::<HierarchyRow>() {
        let row = rec.map_err(|e| crate::io::csv_error(path, e))?;
        h.add_edge(row.child_cui, row.parent_cui);
    }
    Ok(h)
}

pub fn save_hierarchy(h: &Hierarchy, path: &Path) -> Result<()> {
    let mut text = String::from("child_cui\tparent_cui\n");
    for (c, p) in h.edges() {
        text.push_str(&format!("{c}\t{p}\n"));
    }
    crate::io::write_atomic(path, text.as_bytes())
}

/// Adds `(D, relation, A')` for every `(D, relation, A)` and every ancestor
/// `A'` of `A`.
pub fn extend_by_hierarchy(
    triplets: &TripletStore,
    relation: &str,
    hierarchy: &Hierarchy,
) -> Result<TripletStore> {
    hierarchy.check_acyclic()?;
    let mut out = triplets.clone();
    let mut closure: HashMap<String, BTreeSet<String>> = HashMap::new();
    for t in triplets.iter().filter(|t| t.relation == relation) {
        let ancestors = closure
            .entry(t.tail_cui.clone())
            .or_insert_with(|| hierarchy.ancestors(&t.tail_cui));
        for a in ancestors.iter() {
            out.insert(Triplet::new(&t.head_cui, relation, a, "hierarchy"));
        }
    }
    Ok(out)
}

/// Drops triplets whose slot groups violate the schema or whose entities
/// carry a banned semantic type.
pub fn filter_by_schema(
    triplets: &TripletStore,
    schema: &RelationSchema,
    lexicon: &Lexicon,
    banned_semantic_types: &BTreeSet<String>,
) -> Result<TripletStore> {
    let mut out = TripletStore::new();
    for t in triplets.iter() {
        let head = lexicon
            .get(&t.head_cui)
            .ok_or_else(|| Error::MissingConcept(t.head_cui.clone()))?;
        let tail = lexicon
            .get(&t.tail_cui)
            .ok_or_else(|| Error::MissingConcept(t.tail_cui.clone()))?;
        if schema.get(&t.relation).is_none() {
            return Err(Error::UnknownRelation(t.relation.clone()));
        }
        if !schema.allows(&t.relation, &head.semantic_group, &tail.semantic_group) {
            continue;
        }
        if banned_semantic_types.contains(&head.semantic_type)
            || banned_semantic_types.contains(&tail.semantic_type)
        {
            continue;
        }
        out.insert(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSection {
    pub heading: String,
    pub entries: Vec<String>,
}

/// A parsed list/table page: title plus titled lists of entries. Table
/// cells are given as entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemiStructuredPage {
    pub title: String,
    pub sections: Vec<PageSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadingMatch {
    Exact,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadingRule {
    pub pattern: String,
    #[serde(rename = "match", default = "default_heading_match")]
    pub mode: HeadingMatch,
    pub relation: String,
}

fn default_heading_match() -> HeadingMatch {
    HeadingMatch::Exact
}

impl HeadingRule {
    pub fn new(pattern: &str, mode: HeadingMatch, relation: &str) -> Self {
        HeadingRule {
            pattern: pattern.into(),
            mode,
            relation: relation.into(),
        }
    }

    pub fn matches(&self, heading: &str) -> bool {
        let h = heading.trim().to_lowercase();
        let p = self.pattern.trim().to_lowercase();
        match self.mode {
            HeadingMatch::Exact => h == p,
            HeadingMatch::Prefix => h.starts_with(&p),
        }
    }
}

/// Head from the page title, relation from the section heading, tails from
/// the (short) list entries.
pub fn extract_from_semistructured(
    page: &SemiStructuredPage,
    heading_to_relation: &[HeadingRule],
    lexicon: &Lexicon,
    max_entry_tokens: usize,
) -> Result<Vec<Triplet>> {
    if heading_to_relation.is_empty() {
        return Err(Error::config("headings", "heading-to-relation map is empty"));
    }
    let title_tokens = tokenize(&page.title);
    let head = lexicon
        .find_mentions(&title_tokens)
        .into_iter()
        .next()
        .ok_or_else(|| Error::NoHeadMention(page.title.clone()))?
        .cui;
    let source = format!("page:{}", page.title);

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for section in &page.sections {
        let Some(rule) = heading_to_relation.iter().find(|r| r.matches(&section.heading)) else {
            continue;
        };
        for entry in &section.entries {
            let toks = tokenize(entry);
            if toks.len() > max_entry_tokens {
                log::debug!("skipping long entry ({} tokens) on `{}`", toks.len(), page.title);
                continue;
            }
            for m in lexicon.find_mentions(&toks) {
                if m.cui == head {
                    continue;
                }
                if seen.insert((rule.relation.clone(), m.cui.clone())) {
                    out.push(Triplet::new(&head, &rule.relation, &m.cui, &source));
                }
            }
        }
    }
    Ok(out)
}
