use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::{heading_path_string, CorpusStore, Document};
use crate::lexicon::{Lexicon, Mention};
use crate::triplets::{RelationSchema, Triplet, TripletStore};

use super::{decompose, nearest_pair, Bag, Decomposition, Distance, EntityRef, Instance};

type BagKey = (String, String, String);

/// Bag a triplet's instance belongs to, given the surface order of its
/// entities. Undirected labels use the sorted pair; directed labels read
/// tail-first move to the inverse label when one exists.
pub(crate) fn bag_key(t: &Triplet, head_first: bool, schema: &RelationSchema) -> Option<BagKey> {
    let def = schema.get(&t.relation)?;
    let key = if !def.directed {
        let (a, b) = super::unordered(&t.head_cui, &t.tail_cui);
        (a, t.relation.clone(), b)
    } else {
        match (&def.inverse_of, head_first) {
            (Some(inv), false) => (t.tail_cui.clone(), inv.clone(), t.head_cui.clone()),
            _ => (t.head_cui.clone(), t.relation.clone(), t.tail_cui.clone()),
        }
    };
    Some(key)
}

struct BagBuilder {
    instances: Vec<Instance>,
    seen: HashSet<(usize, usize, usize, Distance)>,
}

fn group(lexicon: &Lexicon, cui: &str) -> String {
    lexicon.group_of(cui).unwrap_or("UNK").to_string()
}

/// Distant supervision: one short-distance instance per (triplet, sentence)
/// mentioning both entities, one long-distance instance per (triplet,
/// sentence) with the head in the title and only the tail in the sentence.
pub fn generate_positive_bags(
    corpus: &CorpusStore,
    lexicon: &Lexicon,
    triplets: &TripletStore,
    schema: &RelationSchema,
) -> Vec<Bag> {
    let all: Vec<Triplet> = triplets
        .iter()
        .filter(|t| {
            let known = schema.get(&t.relation).is_some();
            if !known {
                log::warn!("triplet relation `{}` not in schema; ignored", t.relation);
            }
            known
        })
        .collect();
    let mut by_head: HashMap<&str, Vec<&Triplet>> = HashMap::new();
    for t in &all {
        by_head.entry(t.head_cui.as_str()).or_default().push(t);
    }

    let mut bags: BTreeMap<BagKey, BagBuilder> = BTreeMap::new();
    let mut push = |key: BagKey, ref_key: (usize, usize, usize, Distance), inst: Instance| {
        let b = bags.entry(key).or_insert_with(|| BagBuilder {
            instances: Vec::new(),
            seen: HashSet::new(),
        });
        if b.seen.insert(ref_key) {
            b.instances.push(inst);
        }
    };

    for (di, doc) in corpus.documents().iter().enumerate() {
        let title_mentions = lexicon.find_mentions(&doc.title_tokens);
        let mut title_first: HashMap<&str, &Mention> = HashMap::new();
        for m in &title_mentions {
            title_first.entry(m.cui.as_str()).or_insert(m);
        }

        for (si, section) in doc.sections.iter().enumerate() {
            let headings = heading_path_string(section);
            for (ti, sentence) in section.sentences.iter().enumerate() {
                let mentions = lexicon.find_mentions(&sentence.tokens);
                let mut by_cui: BTreeMap<&str, Vec<&Mention>> = BTreeMap::new();
                for m in &mentions {
                    by_cui.entry(m.cui.as_str()).or_default().push(m);
                }
                let ctx = Context {
                    doc,
                    section: si,
                    sentence: ti,
                    headings: &headings,
                    tokens: &sentence.tokens,
                    lexicon,
                };

                // short distance
                for (&cui, head_mentions) in &by_cui {
                    let Some(ts) = by_head.get(cui) else { continue };
                    for t in ts {
                        let Some(tail_mentions) = by_cui.get(t.tail_cui.as_str()) else {
                            continue;
                        };
                        let Some((first, second)) = nearest_pair(head_mentions, tail_mentions) else {
                            continue;
                        };
                        let head_first = first.cui == t.head_cui;
                        let Some(key) = bag_key(t, head_first, schema) else { continue };
                        push(key, (di, si, ti, Distance::Short), ctx.short(first, second));
                    }
                }

                // long distance: head in title, tail only in the sentence
                for (&cui, title_mention) in &title_first {
                    let Some(ts) = by_head.get(cui) else { continue };
                    if by_cui.contains_key(cui) {
                        continue;
                    }
                    for t in ts {
                        let Some(tail_mentions) = by_cui.get(t.tail_cui.as_str()) else {
                            continue;
                        };
                        let Some(key) = bag_key(t, true, schema) else { continue };
                        push(
                            key,
                            (di, si, ti, Distance::Long),
                            ctx.long(title_mention, tail_mentions[0]),
                        );
                    }
                }
            }
        }
    }

    bags.into_iter()
        .map(|((head, label, tail), b)| Bag {
            head_cui: head,
            tail_cui: tail,
            label,
            instances: b.instances,
        })
        .collect()
}

struct Context<'a> {
    doc: &'a Document,
    section: usize,
    sentence: usize,
    headings: &'a [String],
    tokens: &'a [String],
    lexicon: &'a Lexicon,
}

impl Context<'_> {
    fn base(&self, e1: EntityRef, e2: EntityRef, distance: Distance, decomposition: Decomposition) -> Instance {
        Instance {
            doc_id: self.doc.doc_id.clone(),
            section: self.section,
            sentence: self.sentence,
            title_tokens: self.doc.title_tokens.clone(),
            heading_tokens: self.headings.to_vec(),
            sentence_tokens: self.tokens.to_vec(),
            e1,
            e2,
            distance,
            decomposition,
        }
    }

    pub(super) fn short(&self, first: &Mention, second: &Mention) -> Instance {
        let d = decompose(self.tokens, (first.start, first.end), (second.start, second.end))
            .expect("matcher mentions never overlap");
        self.base(
            EntityRef::in_sentence(first, &group(self.lexicon, &first.cui)),
            EntityRef::in_sentence(second, &group(self.lexicon, &second.cui)),
            Distance::Short,
            d,
        )
    }

    fn long(&self, title: &Mention, tail: &Mention) -> Instance {
        let d = Decomposition {
            head: Vec::new(),
            e1: self.doc.title_tokens[title.start..title.end].to_vec(),
            middle: self.tokens[..tail.start].to_vec(),
            e2: self.tokens[tail.start..tail.end].to_vec(),
            tail: self.tokens[tail.end..].to_vec(),
        };
        self.base(
            EntityRef::in_title(title, &group(self.lexicon, &title.cui)),
            EntityRef::in_sentence(tail, &group(self.lexicon, &tail.cui)),
            Distance::Long,
            d,
        )
    }
}

/// Builds a short-distance instance for a sentence (used by the negative pool).
pub(super) fn short_instance(
    doc: &Document,
    section: usize,
    sentence: usize,
    headings: &[String],
    lexicon: &Lexicon,
    first: &Mention,
    second: &Mention,
) -> Instance {
    let tokens = &doc.sections[section].sentences[sentence].tokens;
    Context {
        doc,
        section,
        sentence,
        headings,
        tokens,
        lexicon,
    }
    .short(first, second)
}
