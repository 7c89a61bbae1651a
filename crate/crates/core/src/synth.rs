//! Seeded synthetic corpora, lexicons and embeddings.
//!
//! Used by the `synth-demo` pipeline and by the acceptance experiments. All
//! concept names are made-up words so they never collide with the template
//! vocabulary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, RawDocument, RawSection};
use crate::embeddings::{CuiEmbeddingTable, VectorTable};
use crate::error::Result;
use crate::lexicon::{save_lexicon, Concept, Lexicon};
use crate::sampling::{
    assemble_datasets, decompose, Bag, Dataset, Distance, EntityRef, Instance, Location, NegativeKind,
};
use crate::triplets::{save_hierarchy, save_triplets, Hierarchy, RelationDef, RelationSchema, Triplet, TripletStore, NA};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "vas", "zor", "pel", "dri", "nox", "bel", "cor", "fen", "gal", "hib", "jut",
    "lam", "mur", "opt", "quin", "ras", "sel", "tam", "ulv", "wex",
];

fn pseudo_word(rng: &mut ChaCha8Rng, suffix: &str) -> String {
    let n = rng.gen_range(2..=3);
    let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    w.push_str(suffix);
    w
}

/// `n` distinct names, none already in `taken`.
fn names(rng: &mut ChaCha8Rng, n: usize, suffix: &str, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng, suffix);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// One of the concept's surface forms, chosen at random.
fn surface(rng: &mut ChaCha8Rng, lexicon: &Lexicon, cui: &str) -> String {
    let terms: Vec<&str> = lexicon.get(cui).expect("generated concept").terms().collect();
    terms.choose(rng).expect("at least one term").to_string()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// A synthetic corpus with everything the pipeline needs to run on it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<RawDocument>,
    pub corpus: CorpusStore,
    pub lexicon: Lexicon,
    pub triplets: TripletStore,
    pub schema: RelationSchema,
    pub hierarchy: Hierarchy,
    pub cui_vectors: VectorTable,
    /// Groups whose co-mentions feed the negative pool.
    pub irrelevant_groups: BTreeSet<String>,
}

/// Where [`SynthCorpus::write`] put each input file.
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub triplets: PathBuf,
    pub hierarchy: PathBuf,
    pub cui_embeddings: PathBuf,
}

impl SynthCorpus {
    pub fn cui_table(&self) -> CuiEmbeddingTable {
        CuiEmbeddingTable::new(self.cui_vectors.clone(), self.hierarchy.clone())
    }

    /// Writes the raw inputs in the formats the CLI ingests.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
        let files = SynthFiles {
            corpus: dir.join("corpus.jsonl"),
            lexicon: dir.join("lexicon.tsv"),
            triplets: dir.join("triplets.tsv"),
            hierarchy: dir.join("hierarchy.tsv"),
            cui_embeddings: dir.join("cui.vec"),
        };
        crate::io::write_jsonl(&files.corpus, &self.documents)?;
        save_lexicon(&self.lexicon, &files.lexicon)?;
        save_triplets(&self.triplets, &files.triplets)?;
        save_hierarchy(&self.hierarchy, &files.hierarchy)?;
        self.cui_vectors.save(&files.cui_embeddings)?;
        Ok(files)
    }
}

/// Three relations over disorders and anatomy: `MC` (directed, no inverse),
/// `DDx` (undirected) and `IN`.
pub fn template_schema() -> RelationSchema {
    RelationSchema::new(vec![
        RelationDef::directed("MC", "DISO", "DISO", None),
        RelationDef::undirected("DDx", "DISO", "DISO"),
        RelationDef::directed("IN", "DISO", "ANAT", None),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub seed: u64,
    pub disorders: usize,
    pub anatomy: usize,
    pub chemicals: usize,
    pub triplets_per_relation: usize,
    /// Each triplet is expressed in 1 to this many sentences.
    pub max_sentences_per_triplet: usize,
    /// Distinct chemical pairs that co-occur.
    pub pool_pairs: usize,
    pub pool_sentences: usize,
    /// Sentences with a single disorder mention.
    pub filler_sentences: usize,
    /// Documents whose title names the head and whose text names only the tail.
    pub titled_documents: usize,
    pub sentences_per_document: usize,
    pub cui_dim: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            seed: 0,
            disorders: 60,
            anatomy: 12,
            chemicals: 40,
            triplets_per_relation: 40,
            max_sentences_per_triplet: 3,
            pool_pairs: 200,
            pool_sentences: 400,
            filler_sentences: 100,
            titled_documents: 12,
            sentences_per_document: 8,
            cui_dim: 16,
        }
    }
}

const CUES: &[(&str, &[&str])] = &[
    (
        "MC",
        &["{h} frequently causes {t}", "{h} can lead to {t}", "{h} is a known cause of {t}"],
    ),
    (
        "DDx",
        &["{h} is often confused with {t}", "{h} must be distinguished from {t}", "{h} mimics {t}"],
    ),
    (
        "IN",
        &["{h} typically affects the {t}", "{h} is localized in the {t}", "{h} involves the {t}"],
    ),
];

const POOL_TEMPLATES: &[&str] = &[
    "{h} was given together with {t}",
    "{h} and {t} were measured in the same sample",
    "{h} was compared with {t}",
];

const FILLER_TEMPLATES: &[&str] = &[
    "{h} was reported in several patients",
    "patients with {h} were followed for two years",
    "the prevalence of {h} remains unclear",
];

const PREFIXES: &[&str] = &["", "in this cohort , ", "notably , ", "as expected , "];
const SUFFIXES: &[&str] = &["", " in adults", " during follow-up", " in some patients"];
const HEADINGS: &[&[&str]] = &[&["Findings"], &["Discussion"], &["Results", "Clinical course"]];

fn render(rng: &mut ChaCha8Rng, template: &str, h: &str, t: &str) -> String {
    let core = template.replace("{h}", h).replace("{t}", t);
    let prefix = PREFIXES.choose(rng).expect("non-empty");
    let suffix = SUFFIXES.choose(rng).expect("non-empty");
    capitalize(&format!("{prefix}{core}{suffix}."))
}

fn to_documents(rng: &mut ChaCha8Rng, mut sentences: Vec<String>, per_doc: usize, titles: &[String]) -> Vec<RawDocument> {
    sentences.shuffle(rng);
    sentences
        .chunks(per_doc.max(1))
        .enumerate()
        .map(|(k, chunk)| {
            let split = chunk.len().div_ceil(2);
            let sections = [&chunk[..split], &chunk[split..]]
                .into_iter()
                .filter(|c| !c.is_empty())
                .map(|c| RawSection {
                    headings: HEADINGS
                        .choose(rng)
                        .expect("non-empty")
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    text: c.join(" "),
                })
                .collect();
            RawDocument {
                doc_id: format!("doc{k:05}"),
                title: titles.get(k).cloned().unwrap_or_else(|| format!("Case series {k}")),
                sections,
            }
        })
        .collect()
}

fn distinct_pairs(rng: &mut ChaCha8Rng, a: &[String], b: &[String], n: usize, used: &mut BTreeSet<(String, String)>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let max = a.len() * b.len();
    let mut tries = 0;
    while out.len() < n && tries < max * 20 {
        tries += 1;
        let x = a.choose(rng).expect("non-empty").clone();
        let y = b.choose(rng).expect("non-empty").clone();
        if x == y {
            continue;
        }
        let key = if x <= y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) };
        if used.insert(key) {
            out.push((x, y));
        }
    }
    out
}

/// Templated corpus where a cue phrase between the two entities determines
/// the relation. Chemical co-mentions with neutral phrasing supply the
/// negative pool.
pub fn templated_corpus(cfg: &TemplateConfig) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = BTreeSet::new();
    let diso = names(&mut rng, cfg.disorders, "osis", &mut taken);
    let anat = names(&mut rng, cfg.anatomy, "um", &mut taken);
    let chem = names(&mut rng, cfg.chemicals, "ine", &mut taken);

    let mut concepts = Vec::new();
    let cui = |prefix: &str, i: usize| format!("{prefix}{i:04}");
    for (i, n) in diso.iter().enumerate() {
        let mut c = Concept::new(cui("D", i), n, "T047", "DISO");
        if i % 5 == 0 {
            c = c.with_synonyms([format!("{n} syndrome")]);
        }
        concepts.push(c);
    }
    for (i, n) in anat.iter().enumerate() {
        concepts.push(Concept::new(cui("A", i), n, "T023", "ANAT"));
    }
    for (i, n) in chem.iter().enumerate() {
        concepts.push(Concept::new(cui("C", i), n, "T121", "CHEM"));
    }
    let lexicon = Lexicon::from_concepts(concepts)?;
    let diso_ids: Vec<String> = (0..cfg.disorders).map(|i| cui("D", i)).collect();
    let anat_ids: Vec<String> = (0..cfg.anatomy).map(|i| cui("A", i)).collect();
    let chem_ids: Vec<String> = (0..cfg.chemicals).map(|i| cui("C", i)).collect();

    let mut used = BTreeSet::new();
    let mut triplets = TripletStore::new();
    let mut sentences = Vec::new();
    let mut facts = Vec::new();
    for (label, templates) in CUES {
        let tails = if *label == "IN" { &anat_ids } else { &diso_ids };
        for (h, t) in distinct_pairs(&mut rng, &diso_ids, tails, cfg.triplets_per_relation, &mut used) {
            triplets.insert(Triplet::new(&h, label, &t, "synthetic"));
            facts.push((*templates, h.clone(), t.clone()));
            for _ in 0..rng.gen_range(1..=cfg.max_sentences_per_triplet) {
                let template = templates.choose(&mut rng).expect("non-empty");
                let (hn, tn) = (surface(&mut rng, &lexicon, &h), surface(&mut rng, &lexicon, &t));
                sentences.push(render(&mut rng, template, &hn, &tn));
            }
        }
    }
    let pool_pairs = distinct_pairs(&mut rng, &chem_ids, &chem_ids, cfg.pool_pairs, &mut BTreeSet::new());
    for _ in 0..cfg.pool_sentences {
        let (a, b) = pool_pairs.choose(&mut rng).expect("pool pairs");
        let template = POOL_TEMPLATES.choose(&mut rng).expect("non-empty");
        let (an, bn) = (surface(&mut rng, &lexicon, a), surface(&mut rng, &lexicon, b));
        sentences.push(render(&mut rng, template, &an, &bn));
    }
    for _ in 0..cfg.filler_sentences {
        let d = diso_ids.choose(&mut rng).expect("disorders");
        let template = FILLER_TEMPLATES.choose(&mut rng).expect("non-empty");
        let dn = surface(&mut rng, &lexicon, d);
        sentences.push(render(&mut rng, template, &dn, ""));
    }
    let mut documents = to_documents(&mut rng, sentences, cfg.sentences_per_document, &[]);
    // the head is named only in the title, giving long-distance instances
    let offset = documents.len();
    for k in 0..cfg.titled_documents {
        let (templates, h, t) = facts.choose(&mut rng).expect("facts");
        let template = templates.choose(&mut rng).expect("non-empty");
        let tn = surface(&mut rng, &lexicon, t);
        documents.push(RawDocument {
            doc_id: format!("doc{:05}", offset + k),
            title: capitalize(&lexicon.get(h).expect("concept").preferred_name),
            sections: vec![RawSection {
                headings: vec!["Overview".to_string()],
                text: format!(
                    "{} This condition was first described decades ago.",
                    render(&mut rng, template, "this condition", &tn)
                ),
            }],
        });
    }
    let corpus = CorpusStore::from_raw(&documents)?;

    // the first three anatomy concepts are regions containing the rest
    let mut hierarchy = Hierarchy::new();
    for (i, a) in anat_ids.iter().enumerate().skip(3) {
        hierarchy.add_edge(a.clone(), anat_ids[i % 3].clone());
    }
    let mut cui_vectors = VectorTable::new(cfg.cui_dim);
    for c in lexicon.concepts() {
        // a few anatomy children rely on the hierarchy fallback
        let idx: usize = c.cui[1..].parse().unwrap_or(0);
        if c.semantic_group == "ANAT" && idx >= 3 && idx.is_multiple_of(4) {
            continue;
        }
        cui_vectors.insert(c.cui.clone(), &gaussian(&mut rng, cfg.cui_dim, 1.0))?;
    }

    Ok(SynthCorpus {
        documents,
        corpus,
        lexicon,
        triplets,
        schema: template_schema(),
        hierarchy,
        cui_vectors,
        irrelevant_groups: BTreeSet::from(["CHEM".to_string()]),
    })
}

const FILLER_WORDS: &[&str] = &[
    "the", "patient", "was", "noted", "with", "and", "after", "treatment", "of", "in", "a", "study", "showed",
    "reported", "mild", "severe", "signs", "history",
];

/// Unstructured random corpus over the default medical schema: random
/// filler text with concept names dropped in, titles that sometimes name a
/// concept, and multi-word names that share prefixes.
pub fn random_corpus(seed: u64, sentences: usize, concepts: usize, triplets: usize) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let n_anat = concepts / 3;
    let n_diso = concepts - n_anat;
    let diso = names(&mut rng, n_diso, "itis", &mut taken);
    let anat = names(&mut rng, n_anat, "al", &mut taken);

    let mut all = Vec::new();
    for (i, n) in diso.iter().enumerate() {
        // every fourth disorder extends the previous name, so the matcher
        // has to prefer the longer span
        let name = if i % 4 == 3 { format!("{} {}", diso[i - 1], n) } else { n.clone() };
        all.push(Concept::new(format!("D{i:03}"), &name, "T047", "DISO"));
    }
    for (i, n) in anat.iter().enumerate() {
        all.push(Concept::new(format!("A{i:03}"), n, "T023", "ANAT"));
    }
    let lexicon = Lexicon::from_concepts(all)?;
    let schema = RelationSchema::medical_default();

    let diso_ids: Vec<String> = (0..n_diso).map(|i| format!("D{i:03}")).collect();
    let anat_ids: Vec<String> = (0..n_anat).map(|i| format!("A{i:03}")).collect();
    let mut store = TripletStore::new();
    let labels = ["DDx", "MC", "MBCB", "IN"];
    while store.len() < triplets {
        let label = labels.choose(&mut rng).expect("labels");
        let h = diso_ids.choose(&mut rng).expect("disorders");
        let t = if *label == "IN" { anat_ids.choose(&mut rng) } else { diso_ids.choose(&mut rng) }.expect("tails");
        if h == t {
            continue;
        }
        store.insert(Triplet::new(h, label, t, "synthetic"));
    }
    let facts = store.to_vec();
    let ids: Vec<&String> = diso_ids.iter().chain(&anat_ids).collect();
    let name = |c: &str| lexicon.get(c).expect("concept").preferred_name.clone();

    let mut texts = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let mut words: Vec<String> = (0..rng.gen_range(4..14))
            .map(|_| FILLER_WORDS.choose(&mut rng).expect("filler").to_string())
            .collect();
        let mut inserts: Vec<String> = Vec::new();
        if rng.gen_bool(0.6) {
            let f = facts.choose(&mut rng).expect("facts");
            if rng.gen_bool(0.8) {
                inserts.push(name(&f.head_cui));
            }
            inserts.push(name(&f.tail_cui));
        }
        for _ in 0..rng.gen_range(0..3) {
            inserts.push(name(ids.choose(&mut rng).expect("ids")));
        }
        for w in inserts {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, w);
        }
        texts.push(capitalize(&format!("{}.", words.join(" "))));
    }
    let n_docs = sentences.div_ceil(10);
    let titles: Vec<String> = (0..n_docs)
        .map(|k| {
            if rng.gen_bool(0.5) {
                capitalize(&name(&facts.choose(&mut rng).expect("facts").head_cui))
            } else {
                format!("Report {k}")
            }
        })
        .collect();
    let documents = to_documents(&mut rng, texts, 10, &titles);
    let corpus = CorpusStore::from_raw(&documents)?;
    let mut cui_vectors = VectorTable::new(8);
    for id in &ids {
        cui_vectors.insert(id.as_str(), &gaussian(&mut rng, 8, 1.0))?;
    }
    Ok(SynthCorpus {
        documents,
        corpus,
        lexicon,
        triplets: store,
        schema,
        hierarchy: Hierarchy::new(),
        cui_vectors,
        irrelevant_groups: BTreeSet::new(),
    })
}

/// A task whose label needs both the text and the concept embeddings.
#[derive(Debug, Clone)]
pub struct FusionTask {
    pub dataset: Dataset,
    pub labels: Vec<String>,
    pub cui_table: CuiEmbeddingTable,
}

const RAISE_WORDS: &[&str] = &["raises", "increases", "elevates"];
const LOWER_WORDS: &[&str] = &["lowers", "reduces", "decreases"];
const NEUTRAL_WORDS: &[&str] = &["often", "clearly", "slightly", "in", "vivo", "the", "level", "of"];

/// Four labels from two bits: a text bit (the verb between the entities
/// raises or lowers) and a concept bit (sign of the head entity's first
/// embedding coordinate). Half the bags are `NA` (both bits 0); the rest
/// are spread over the three relations.
pub fn fusion_task(seed: u64, bags: usize, cui_dim: usize) -> Result<FusionTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = [NA, "R1", "R2", "R3"].map(String::from).to_vec();
    let mut table = VectorTable::new(cui_dim);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..bags {
        let label = if i % 2 == 0 { 0 } else { 1 + (i / 2) % 3 };
        let text_bit = label >= 2;
        let cui_bit = label % 2 == 1;
        let head = format!("H{i:05}");
        let tail = format!("T{i:05}");
        let mut hv = gaussian(&mut rng, cui_dim, 1.0);
        hv[0] = if cui_bit { 1.0 } else { -1.0 } + rng.sample::<f64, _>(StandardNormal) * 0.2;
        table.insert(head.clone(), &hv)?;
        table.insert(tail.clone(), &gaussian(&mut rng, cui_dim, 1.0))?;

        let verbs = if text_bit { RAISE_WORDS } else { LOWER_WORDS };
        let instances = (0..rng.gen_range(1..=3))
            .map(|_| {
                let mut tokens = vec!["hx".to_string()];
                for _ in 0..rng.gen_range(0..3) {
                    tokens.push(NEUTRAL_WORDS.choose(&mut rng).expect("words").to_string());
                }
                tokens.push(verbs.choose(&mut rng).expect("verbs").to_string());
                for _ in 0..rng.gen_range(0..3) {
                    tokens.push(NEUTRAL_WORDS.choose(&mut rng).expect("words").to_string());
                }
                tokens.push("tx".to_string());
                let n = tokens.len();
                let entity = |cui: &str, s: usize| EntityRef {
                    cui: cui.to_string(),
                    group: "CHEM".to_string(),
                    location: Location::Sentence,
                    start: s,
                    end: s + 1,
                };
                Instance {
                    doc_id: format!("fusion{i}"),
                    section: 0,
                    sentence: 0,
                    title_tokens: Vec::new(),
                    heading_tokens: Vec::new(),
                    decomposition: decompose(&tokens, (0, 1), (n - 1, n)).expect("disjoint spans"),
                    sentence_tokens: tokens,
                    e1: entity(&head, 0),
                    e2: entity(&tail, n - 1),
                    distance: Distance::Short,
                }
            })
            .collect();
        let bag = Bag {
            head_cui: head,
            tail_cui: tail,
            label: labels[label].clone(),
            instances,
        };
        if label == 0 {
            negatives.push(bag);
        } else {
            positives.push(bag);
        }
    }
    let dataset = assemble_datasets(&positives, &negatives, &[], NegativeKind::Type1, 0.8, seed)?;
    Ok(FusionTask {
        dataset,
        labels,
        cui_table: CuiEmbeddingTable::new(table, Hierarchy::new()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::generate_positive_bags;

    #[test]
    fn templated_corpus_is_deterministic_and_relational() {
        let cfg = TemplateConfig::default();
        let a = templated_corpus(&cfg).unwrap();
        let b = templated_corpus(&cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.triplets.len(), 3 * cfg.triplets_per_relation);
        let bags = generate_positive_bags(&a.corpus, &a.lexicon, &a.triplets, &a.schema);
        assert_eq!(bags.len(), a.triplets.len());
        let long = bags
            .iter()
            .flat_map(|b| &b.instances)
            .filter(|i| i.distance == crate::sampling::Distance::Long)
            .count();
        assert!(long >= cfg.titled_documents / 2, "{long}");
        assert!(a.cui_vectors.len() < a.lexicon.len());
    }

    #[test]
    fn random_corpus_has_requested_size() {
        let c = random_corpus(1, 200, 30, 12).unwrap();
        assert_eq!(c.corpus.num_sentences(), 200);
        assert_eq!(c.lexicon.len(), 30);
        assert_eq!(c.triplets.len(), 12);
    }

    #[test]
    fn fusion_task_balances_negatives() {
        let t = fusion_task(0, 200, 6).unwrap();
        let neg = t.dataset.bags.iter().filter(|b| b.is_negative()).count();
        assert_eq!(neg, 100);
        assert_eq!(t.dataset.bags.len(), 200);
    }

    #[test]
    fn write_produces_loadable_inputs() {
        let c = templated_corpus(&TemplateConfig {
            disorders: 10,
            anatomy: 6,
            chemicals: 6,
            triplets_per_relation: 3,
            pool_pairs: 5,
            pool_sentences: 10,
            filler_sentences: 2,
            ..TemplateConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = c.write(dir.path()).unwrap();
        let corpus = crate::corpus::ingest_corpus(&f.corpus, crate::corpus::CorpusFormat::JsonlDocs).unwrap();
        assert_eq!(corpus, c.corpus);
        let lex = crate::lexicon::load_lexicon(&f.lexicon).unwrap();
        assert_eq!(lex.len(), c.lexicon.len());
        let (trip, _) = crate::triplets::load_triplets(&f.triplets, &c.schema).unwrap();
        assert_eq!(trip.to_vec(), c.triplets.to_vec());
        let cui = VectorTable::load(&f.cui_embeddings).unwrap();
        assert_eq!(cui, c.cui_vectors);
    }
}
