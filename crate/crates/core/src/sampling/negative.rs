use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{heading_path_string, CorpusStore};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::lexicon::{Concept, Lexicon, Mention};
use crate::triplets::{RelationSchema, NA};

use super::positive::short_instance;
use super::{nearest_pair, unordered, Bag, Decomposition, Distance, EntityRef, Instance, Location};

/// Sentences holding two or more entities from groups no relation uses,
/// grouped by entity pair and subsampled to `pool_size` bags.
pub fn build_negative_pool(
    corpus: &CorpusStore,
    lexicon: &Lexicon,
    schema: &RelationSchema,
    irrelevant_groups: &BTreeSet<String>,
    pool_size: usize,
    seed: u64,
) -> Result<(Vec<Bag>, Vec<String>)> {
    let slot_groups = schema.slot_groups();
    if let Some(g) = irrelevant_groups.iter().find(|g| slot_groups.contains(g.as_str())) {
        return Err(Error::config(
            "irrelevant_groups",
            format!("group `{g}` is used by a relation slot"),
        ));
    }

    let mut bags: BTreeMap<(String, String), Vec<Instance>> = BTreeMap::new();
    for doc in corpus.documents() {
        for (si, section) in doc.sections.iter().enumerate() {
            let headings = heading_path_string(section);
            for (ti, sentence) in section.sentences.iter().enumerate() {
                let mentions: Vec<Mention> = lexicon
                    .find_mentions(&sentence.tokens)
                    .into_iter()
                    .filter(|m| {
                        lexicon
                            .group_of(&m.cui)
                            .is_some_and(|g| irrelevant_groups.contains(g))
                    })
                    .collect();
                let mut best: Option<(&Mention, &Mention)> = None;
                let mut best_key = None;
                for (i, a) in mentions.iter().enumerate() {
                    for b in &mentions[i + 1..] {
                        if a.cui == b.cui {
                            continue;
                        }
                        let Some((x, y)) = nearest_pair(&[a], &[b]) else { continue };
                        let key = (y.start - x.end, x.start, y.start);
                        if best_key.is_none_or(|k| key < k) {
                            best_key = Some(key);
                            best = Some((x, y));
                        }
                    }
                }
                if let Some((x, y)) = best {
                    let inst = short_instance(doc, si, ti, &headings, lexicon, x, y);
                    bags.entry(unordered(&x.cui, &y.cui)).or_default().push(inst);
                }
            }
        }
    }

    let mut all: Vec<Bag> = bags
        .into_iter()
        .map(|((a, b), instances)| Bag {
            head_cui: a,
            tail_cui: b,
            label: NA.to_string(),
            instances,
        })
        .collect();
    let mut warnings = Vec::new();
    if all.len() < pool_size {
        let msg = format!("negative pool has {} bags, fewer than the requested {pool_size}", all.len());
        log::warn!("{msg}");
        warnings.push(msg);
    } else if all.len() > pool_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, all.len(), pool_size).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<Bag>> = all.into_iter().map(Some).collect();
        all = keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect();
    }
    Ok((all, warnings))
}

fn pick_replacement<'a>(
    rng: &mut ChaCha8Rng,
    members: &[&'a Concept],
    exclude: &[&str],
) -> Option<&'a Concept> {
    let allowed: Vec<&Concept> = members
        .iter()
        .copied()
        .filter(|c| !exclude.contains(&c.cui.as_str()))
        .collect();
    if allowed.is_empty() {
        None
    } else {
        Some(allowed[rng.gen_range(0..allowed.len())])
    }
}

const REPLACEMENT_ATTEMPTS: usize = 32;

/// Splices each positive instance: same head and tail text, the middle text
/// of a random pool instance, and random same-group entities in place of E1
/// and E2. Entity replacements are drawn once per positive bag, so each
/// positive bag yields one negative bag of the same size.
pub fn generate_type1_negatives(
    positives: &[Bag],
    pool: &[Bag],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Vec<Bag>> {
    let donors: Vec<&Instance> = pool.iter().flat_map(|b| b.instances.iter()).collect();
    if donors.is_empty() {
        return Err(Error::config("pool", "negative pool is empty"));
    }
    let positive_pairs: BTreeSet<(String, String)> = positives.iter().map(Bag::pair_key).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out: Vec<Bag> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();

    for bag in positives {
        let group_of = |cui: &str| {
            lexicon
                .group_of(cui)
                .map(str::to_string)
                .ok_or_else(|| Error::MissingConcept(cui.to_string()))
        };
        let head_group = group_of(&bag.head_cui)?;
        let tail_group = group_of(&bag.tail_cui)?;
        let head_members = lexicon.group_members(&head_group);
        let tail_members = lexicon.group_members(&tail_group);
        for (g, m) in [(&head_group, &head_members), (&tail_group, &tail_members)] {
            if m.len() < 2 {
                return Err(Error::GroupTooSmall(g.clone()));
            }
        }

        let mut chosen = None;
        for _ in 0..REPLACEMENT_ATTEMPTS {
            let h = pick_replacement(&mut rng, &head_members, &[&bag.head_cui])
                .ok_or_else(|| Error::GroupTooSmall(head_group.clone()))?;
            let Some(t) = pick_replacement(&mut rng, &tail_members, &[&bag.tail_cui, &h.cui]) else {
                continue;
            };
            let candidate = (h, t);
            let clash = positive_pairs.contains(&unordered(&h.cui, &t.cui));
            chosen = Some(candidate);
            if !clash {
                break;
            }
        }
        let Some((new_head, new_tail)) = chosen else {
            return Err(Error::GroupTooSmall(tail_group));
        };
        if positive_pairs.contains(&unordered(&new_head.cui, &new_tail.cui)) {
            log::warn!(
                "replacement pair ({}, {}) coincides with a positive pair",
                new_head.cui,
                new_tail.cui
            );
        }

        let head_tokens = new_head.name_tokens();
        let tail_tokens = new_tail.name_tokens();
        let mut instances = Vec::with_capacity(bag.instances.len());
        for inst in &bag.instances {
            let donor = donors[rng.gen_range(0..donors.len())];
            let replace = |e: &EntityRef| {
                if e.cui == bag.head_cui {
                    (new_head, &head_tokens, head_group.as_str())
                } else {
                    (new_tail, &tail_tokens, tail_group.as_str())
                }
            };
            let (c1, t1, g1) = replace(&inst.e1);
            let (c2, t2, g2) = replace(&inst.e2);
            instances.push(splice(inst, &donor.decomposition.middle, (c1, t1, g1), (c2, t2, g2)));
        }

        let key = (new_head.cui.clone(), new_tail.cui.clone());
        match index.get(&key) {
            Some(&i) => out[i].instances.extend(instances),
            None => {
                index.insert(key, out.len());
                out.push(Bag {
                    head_cui: new_head.cui.clone(),
                    tail_cui: new_tail.cui.clone(),
                    label: NA.to_string(),
                    instances,
                });
            }
        }
    }
    Ok(out)
}

fn splice(
    positive: &Instance,
    middle: &[String],
    (c1, t1, g1): (&Concept, &Vec<String>, &str),
    (c2, t2, g2): (&Concept, &Vec<String>, &str),
) -> Instance {
    let d = &positive.decomposition;
    let decomposition = Decomposition {
        head: d.head.clone(),
        e1: t1.clone(),
        middle: middle.to_vec(),
        e2: t2.clone(),
        tail: d.tail.clone(),
    };
    let entity = |cui: &Concept, group: &str, location, start, len: usize| EntityRef {
        cui: cui.cui.clone(),
        group: group.to_string(),
        location,
        start,
        end: start + len,
    };
    match positive.distance {
        Distance::Short => {
            let e1_start = d.head.len();
            let e2_start = e1_start + t1.len() + middle.len();
            Instance {
                sentence_tokens: decomposition.concat(),
                e1: entity(c1, g1, Location::Sentence, e1_start, t1.len()),
                e2: entity(c2, g2, Location::Sentence, e2_start, t2.len()),
                decomposition,
                ..positive.clone()
            }
        }
        Distance::Long => {
            let old = &positive.e1;
            let mut title = positive.title_tokens[..old.start].to_vec();
            title.extend_from_slice(t1);
            title.extend_from_slice(&positive.title_tokens[old.end..]);
            let mut sentence = middle.to_vec();
            sentence.extend_from_slice(t2);
            sentence.extend_from_slice(&d.tail);
            Instance {
                title_tokens: title,
                sentence_tokens: sentence,
                e1: entity(c1, g1, Location::Title, old.start, t1.len()),
                e2: entity(c2, g2, Location::Sentence, middle.len(), t2.len()),
                decomposition,
                ..positive.clone()
            }
        }
    }
}

/// Unweighted mean of the in-vocabulary token vectors; zero when none are.
pub fn sentence_embedding<S: AsRef<str>>(tokens: &[S], word_table: &WordEmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; word_table.dim()];
    let mut n = 0usize;
    for t in tokens {
        if let Some(v) = word_table.get(t.as_ref()) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n > 0 {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    sum
}

/// Mean of the sentence embeddings of a bag's (unmasked) instances.
pub fn bag_embedding(bag: &Bag, word_table: &WordEmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; word_table.dim()];
    for inst in &bag.instances {
        let e = sentence_embedding(&inst.sentence_tokens, word_table);
        for (s, x) in sum.iter_mut().zip(&e) {
            *s += x;
        }
    }
    if !bag.instances.is_empty() {
        let n = bag.instances.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    sum
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu * nv))
}

/// Keeps the `k` pool bags whose best cosine similarity to any positive bag
/// is highest. Ties keep pool order.
pub fn select_type2_negatives(
    pool: &[Bag],
    positives: &[Bag],
    k: usize,
    word_table: &WordEmbeddingTable,
) -> (Vec<Bag>, Vec<String>) {
    let positive_embeddings: Vec<Vec<f64>> = positives
        .iter()
        .map(|b| bag_embedding(b, word_table))
        .collect();
    let scores: Vec<f64> = pool
        .iter()
        .map(|b| {
            let e = bag_embedding(b, word_table);
            positive_embeddings
                .iter()
                .map(|p| cosine_similarity(&e, p).expect("same table dimension"))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut warnings = Vec::new();
    if pool.len() < k {
        let msg = format!("pool has {} bags, fewer than k = {k}", pool.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let selected = order
        .into_iter()
        .take(k)
        .map(|i| Bag {
            label: NA.to_string(),
            ..pool[i].clone()
        })
        .collect();
    (selected, warnings)
}
