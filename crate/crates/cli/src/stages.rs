//! Pipeline stages and their on-disk artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsre_core::corpus::{ingest_corpus, CorpusStore};
use dsre_core::embeddings::{load_word_embeddings, train_skipgram, CuiEmbeddingTable, WordEmbeddingTable};
use dsre_core::io::{read_jsonl, write_atomic, write_json, write_jsonl};
use dsre_core::lexicon::{load_lexicon, Lexicon};
use dsre_core::model::ModelParams;
use dsre_core::sampling::{
    assemble_datasets, build_negative_pool, generate_positive_bags, generate_type1_negatives, load_bags,
    save_bags, select_type2_negatives, Bag, Dataset, NegativeKind, Split,
};
use dsre_core::synth::templated_corpus;
use dsre_core::train_eval::{cross_test, evaluate, loss_log_csv, predict_bags, train, Metrics};
use dsre_core::triplets::{
    extend_by_hierarchy, extract_from_semistructured, filter_by_schema, load_hierarchy, load_triplets,
    save_triplets, Hierarchy, SemiStructuredPage, TripletStore,
};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    ExtractTriplets,
    GenPos,
    GenNeg,
    BuildDataset,
    Train,
    Eval,
    CrossTest,
    /// Bags from `input`, or the test split of the configured dataset.
    Predict { input: Option<PathBuf> },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::ExtractTriplets => "extract-triplets",
            Stage::GenPos => "gen-pos",
            Stage::GenNeg => "gen-neg",
            Stage::BuildDataset => "build-dataset",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::CrossTest => "cross-test",
            Stage::Predict { .. } => "predict",
        }
    }
}

/// File layout of the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }

    pub fn triplets(&self) -> PathBuf {
        self.dir.join("triplets.tsv")
    }

    pub fn positives(&self) -> PathBuf {
        self.dir.join("positives.jsonl")
    }

    pub fn pool(&self) -> PathBuf {
        self.dir.join("negative_pool.jsonl")
    }

    pub fn type1_negatives(&self) -> PathBuf {
        self.dir.join("negatives_type1.jsonl")
    }

    pub fn type2_negatives(&self) -> PathBuf {
        self.dir.join("negatives_type2.jsonl")
    }

    pub fn word_embeddings(&self) -> PathBuf {
        self.dir.join("word_embeddings.vec")
    }

    pub fn dataset(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("dataset_{kind}.jsonl"))
    }

    pub fn model(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("model_{kind}.json"))
    }

    pub fn loss_log(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("loss_log_{kind}.csv"))
    }

    pub fn metrics_json(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("metrics_{kind}.json"))
    }

    pub fn metrics_text(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("metrics_{kind}.txt"))
    }

    pub fn cross_test(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("cross_test_{kind}.json"))
    }

    pub fn predictions(&self, kind: NegativeKind) -> PathBuf {
        self.dir.join(format!("predictions_{kind}.jsonl"))
    }

    /// `path`, if an earlier run of `stage` produced it.
    fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { stage, path })
        }
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: Artifacts,
}

impl Ctx<'_> {
    fn lexicon(&self) -> Result<Lexicon> {
        let path = self.cfg.paths.required("paths.lexicon", &self.cfg.paths.lexicon)?;
        Ok(load_lexicon(path)?)
    }

    fn corpus(&self) -> Result<CorpusStore> {
        Ok(CorpusStore::load(&self.out.require(self.out.corpus(), "ingest")?)?)
    }

    fn hierarchy(&self) -> Result<Hierarchy> {
        match &self.cfg.paths.hierarchy {
            Some(p) => Ok(load_hierarchy(p)?),
            None => Ok(Hierarchy::new()),
        }
    }

    fn cui_table(&self) -> Result<CuiEmbeddingTable> {
        let path = self.cfg.paths.required("paths.cui_embeddings", &self.cfg.paths.cui_embeddings)?;
        let table = CuiEmbeddingTable::load(path, self.hierarchy()?)?;
        if table.dim() != self.cfg.model.d_k {
            return Err(CliError::Invalid(format!(
                "model.d_k: is {} but concept embeddings have dimension {}",
                self.cfg.model.d_k,
                table.dim()
            )));
        }
        Ok(table)
    }

    /// Configured word vectors, else the ones `gen-neg` trained, else none.
    fn word_table(&self) -> Result<Option<WordEmbeddingTable>> {
        let path = match &self.cfg.paths.word_embeddings {
            Some(p) => p.clone(),
            None => self.out.word_embeddings(),
        };
        if !path.is_file() {
            return Ok(None);
        }
        let table = load_word_embeddings(&path)?;
        if table.dim() != self.cfg.model.d_e {
            return Err(CliError::Invalid(format!(
                "model.d_e: is {} but word embeddings have dimension {}",
                self.cfg.model.d_e,
                table.dim()
            )));
        }
        Ok(Some(table))
    }

    fn dataset(&self, kind: NegativeKind) -> Result<Dataset> {
        Ok(Dataset::load(&self.out.require(self.out.dataset(kind), "build-dataset")?)?)
    }

    fn model(&self, kind: NegativeKind) -> Result<ModelParams> {
        Ok(ModelParams::load(&self.out.require(self.out.model(kind), "train")?)?)
    }
}

/// Runs one stage against the artifacts in `cfg.paths.out`.
pub fn run_stage(stage: &Stage, cfg: &PipelineConfig) -> Result<()> {
    let ctx = Ctx {
        cfg,
        out: Artifacts::new(&cfg.paths.out),
    };
    std::fs::create_dir_all(ctx.out.dir())
        .map_err(|e| CliError::Invalid(format!("paths.out: cannot create {}: {e}", ctx.out.dir().display())))?;
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Ingest => ingest(&ctx),
        Stage::ExtractTriplets => extract_triplets(&ctx),
        Stage::GenPos => gen_pos(&ctx),
        Stage::GenNeg => gen_neg(&ctx),
        Stage::BuildDataset => build_dataset(&ctx),
        Stage::Train => train_stage(&ctx),
        Stage::Eval => eval(&ctx).map(|_| ()),
        Stage::CrossTest => cross_test_stage(&ctx),
        Stage::Predict { input } => predict(&ctx, input.as_deref()),
    }
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let corpus = ingest_corpus(paths.required("paths.corpus", &paths.corpus)?, paths.corpus_format)?;
    corpus.save(&ctx.out.corpus())?;
    log::info!("{} documents, {} sentences", corpus.len(), corpus.num_sentences());
    Ok(())
}

fn extract_triplets(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lexicon = ctx.lexicon()?;
    if cfg.paths.triplets.is_none() && cfg.paths.pages.is_none() {
        return Err(CliError::Invalid(
            "paths.triplets: extract-triplets needs paths.triplets or paths.pages".to_string(),
        ));
    }
    let mut store = TripletStore::new();
    if let Some(p) = &cfg.paths.triplets {
        let (kb, warnings) = load_triplets(p, &cfg.schema)?;
        log::info!("{} knowledge-base triplets ({} skipped)", kb.len(), warnings.len());
        store.extend(kb.iter());
    }
    if let Some(p) = &cfg.paths.pages {
        let pages: Vec<SemiStructuredPage> = read_jsonl(p)?;
        let before = store.len();
        for page in &pages {
            match extract_from_semistructured(page, &cfg.extract.headings, &lexicon, cfg.sampler.max_entry_tokens) {
                Ok(ts) => store.extend(ts),
                Err(dsre_core::Error::NoHeadMention(title)) => log::warn!("page `{title}`: no concept in title"),
                Err(e) => return Err(e.into()),
            }
        }
        log::info!("{} triplets from {} pages", store.len() - before, pages.len());
    }
    if let (Some(_), Some(relation)) = (&cfg.paths.hierarchy, &cfg.sampler.hierarchy_relation) {
        store = extend_by_hierarchy(&store, relation, &ctx.hierarchy()?)?;
    }
    let store = filter_by_schema(&store, &cfg.schema, &lexicon, &cfg.sampler.banned_semantic_types)?;
    log::info!("{} triplets after filtering", store.len());
    save_triplets(&store, &ctx.out.triplets())?;
    Ok(())
}

fn gen_pos(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let lexicon = ctx.lexicon()?;
    let (triplets, _) = load_triplets(&ctx.out.require(ctx.out.triplets(), "extract-triplets")?, &ctx.cfg.schema)?;
    let bags = generate_positive_bags(&corpus, &lexicon, &triplets, &ctx.cfg.schema);
    log::info!(
        "{} positive bags, {} instances",
        bags.len(),
        bags.iter().map(|b| b.instances.len()).sum::<usize>()
    );
    save_bags(&ctx.out.positives(), &bags)?;
    Ok(())
}

fn gen_neg(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.sampler.irrelevant_groups.is_empty() {
        return Err(CliError::Invalid("sampler.irrelevant_groups: gen-neg needs at least one group".into()));
    }
    let corpus = ctx.corpus()?;
    let lexicon = ctx.lexicon()?;
    let positives = load_bags(&ctx.out.require(ctx.out.positives(), "gen-pos")?)?;
    let seed = cfg.sampler.seed;
    let (pool, _) = build_negative_pool(
        &corpus,
        &lexicon,
        &cfg.schema,
        &cfg.sampler.irrelevant_groups,
        cfg.sampler.pool_size,
        seed,
    )?;
    let type1 = generate_type1_negatives(&positives, &pool, &lexicon, seed.wrapping_add(1))?;
    let word_table = match &cfg.paths.word_embeddings {
        Some(p) => load_word_embeddings(p)?,
        None => {
            let t = train_skipgram(&corpus, &cfg.embeddings)?;
            t.save(&ctx.out.word_embeddings())?;
            t
        }
    };
    let (type2, _) = select_type2_negatives(&pool, &positives, positives.len(), &word_table);
    log::info!("pool {} bags; {} type 1 and {} type 2 negative bags", pool.len(), type1.len(), type2.len());
    save_bags(&ctx.out.pool(), &pool)?;
    save_bags(&ctx.out.type1_negatives(), &type1)?;
    save_bags(&ctx.out.type2_negatives(), &type2)?;
    Ok(())
}

fn build_dataset(ctx: &Ctx) -> Result<()> {
    let positives = load_bags(&ctx.out.require(ctx.out.positives(), "gen-pos")?)?;
    let type1 = load_bags(&ctx.out.require(ctx.out.type1_negatives(), "gen-neg")?)?;
    let type2 = load_bags(&ctx.out.require(ctx.out.type2_negatives(), "gen-neg")?)?;
    for kind in NegativeKind::ALL {
        let ds = assemble_datasets(
            &positives,
            &type1,
            &type2,
            kind,
            ctx.cfg.sampler.split_fraction,
            ctx.cfg.sampler.seed,
        )?;
        log::info!(
            "dataset {kind}: {} train / {} test bags",
            ds.count(Split::Train),
            ds.count(Split::Test)
        );
        ds.save(&ctx.out.dataset(kind))?;
    }
    Ok(())
}

fn train_stage(ctx: &Ctx) -> Result<()> {
    let kind = ctx.cfg.dataset;
    let dataset = ctx.dataset(kind)?;
    let cui_table = ctx.cui_table()?;
    let word_table = ctx.word_table()?;
    let out = train(
        &dataset,
        &ctx.cfg.labels(),
        &cui_table,
        word_table.as_ref(),
        &ctx.cfg.model,
        &ctx.cfg.train,
    )?;
    if let Some(last) = out.epoch_losses().last() {
        log::info!("final epoch loss {last:.6}");
    }
    out.params.save(&ctx.out.model(kind))?;
    write_atomic(&ctx.out.loss_log(kind), loss_log_csv(&out.loss_log).as_bytes())?;
    Ok(())
}

fn eval(ctx: &Ctx) -> Result<Metrics> {
    let kind = ctx.cfg.dataset;
    let params = ctx.model(kind)?;
    let dataset = ctx.dataset(kind)?;
    let metrics = evaluate(&params, &dataset, Split::Test, &ctx.cui_table()?)?;
    write_json(&ctx.out.metrics_json(kind), &metrics)?;
    let table = metrics.to_string();
    write_atomic(&ctx.out.metrics_text(kind), table.as_bytes())?;
    println!("{table}");
    Ok(metrics)
}

fn cross_test_stage(ctx: &Ctx) -> Result<()> {
    let kind = ctx.cfg.dataset;
    let params = ctx.model(kind)?;
    let trained_on = ctx.dataset(kind)?;
    let cui_table = ctx.cui_table()?;
    let mut reports = BTreeMap::new();
    for other in NegativeKind::ALL {
        let report = cross_test(&params, &trained_on, &ctx.dataset(other)?, &cui_table)?;
        println!(
            "trained on {kind}, tested on {other}: overall {:.4}, negatives {:.4}, positives {:.4}",
            report.overall_accuracy, report.negative_accuracy, report.positive_accuracy
        );
        reports.insert(other.as_str(), report);
    }
    write_json(&ctx.out.cross_test(kind), &reports)?;
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    head_cui: &'a str,
    tail_cui: &'a str,
    label: &'a str,
    predicted: &'a str,
    probabilities: BTreeMap<&'a str, f64>,
}

fn predict(ctx: &Ctx, input: Option<&Path>) -> Result<()> {
    let kind = ctx.cfg.dataset;
    let params = ctx.model(kind)?;
    let bags: Vec<Bag> = match input {
        Some(p) => load_bags(p)?,
        None => ctx.dataset(kind)?.split(Split::Test).cloned().collect(),
    };
    let refs: Vec<&Bag> = bags.iter().collect();
    let preds = predict_bags(&params, &refs, &ctx.cui_table()?)?;
    let labels = params.labels();
    let rows: Vec<Prediction> = bags
        .iter()
        .zip(&preds)
        .map(|(b, (label, probs))| Prediction {
            head_cui: &b.head_cui,
            tail_cui: &b.tail_cui,
            label: &b.label,
            predicted: &labels[*label],
            probabilities: labels.iter().map(String::as_str).zip(probs.iter().copied()).collect(),
        })
        .collect();
    write_jsonl(&ctx.out.predictions(kind), &rows)?;
    log::info!("{} predictions", rows.len());
    Ok(())
}

/// Writes the templated synthetic corpus under `<out>/inputs` and runs every
/// stage on it, ending with evaluation and cross-testing of the configured
/// dataset. Returns the test metrics.
pub fn synth_demo(cfg: &PipelineConfig) -> Result<Metrics> {
    let synth = templated_corpus(&cfg.synth)?;
    let files = synth.write(&cfg.paths.out.join("inputs"))?;
    let mut cfg = cfg.clone();
    cfg.paths.corpus = Some(files.corpus);
    cfg.paths.lexicon = Some(files.lexicon);
    cfg.paths.triplets = Some(files.triplets);
    cfg.paths.pages = None;
    cfg.paths.hierarchy = Some(files.hierarchy);
    cfg.paths.word_embeddings = None;
    cfg.paths.cui_embeddings = Some(files.cui_embeddings);
    cfg.schema = synth.schema.clone();
    cfg.sampler.irrelevant_groups = synth.irrelevant_groups.clone();
    cfg.sampler.hierarchy_relation = None;
    cfg.model.d_k = cfg.synth.cui_dim;
    cfg.model.d_e = cfg.embeddings.dim;
    cfg.validate()?;
    for stage in [
        Stage::Ingest,
        Stage::ExtractTriplets,
        Stage::GenPos,
        Stage::GenNeg,
        Stage::BuildDataset,
        Stage::Train,
    ] {
        run_stage(&stage, &cfg)?;
    }
    let ctx = Ctx {
        cfg: &cfg,
        out: Artifacts::new(&cfg.paths.out),
    };
    let metrics = eval(&ctx)?;
    cross_test_stage(&ctx)?;
    Ok(metrics)
}
