//! Pipeline configuration file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dsre_core::corpus::CorpusFormat;
use dsre_core::embeddings::SkipGramConfig;
use dsre_core::lexicon::is_semantic_group;
use dsre_core::model::ModelConfig;
use dsre_core::sampling::NegativeKind;
use dsre_core::synth::TemplateConfig;
use dsre_core::train_eval::TrainConfig;
use dsre_core::triplets::{HeadingRule, RelationSchema, DEFAULT_MAX_ENTRY_TOKENS};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory every stage reads from and writes to.
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub lexicon: Option<PathBuf>,
    /// Knowledge-base triplets, TSV.
    pub triplets: Option<PathBuf>,
    /// Semi-structured pages, one JSON object per line.
    pub pages: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    /// Pretrained word vectors; trained on the corpus when absent.
    pub word_embeddings: Option<PathBuf>,
    pub cui_embeddings: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("out"),
            corpus: None,
            corpus_format: CorpusFormat::JsonlDocs,
            lexicon: None,
            triplets: None,
            pages: None,
            hierarchy: None,
            word_embeddings: None,
            cui_embeddings: None,
        }
    }
}

impl Paths {
    fn inputs(&self) -> [(&'static str, Option<&PathBuf>); 7] {
        [
            ("paths.corpus", self.corpus.as_ref()),
            ("paths.lexicon", self.lexicon.as_ref()),
            ("paths.triplets", self.triplets.as_ref()),
            ("paths.pages", self.pages.as_ref()),
            ("paths.hierarchy", self.hierarchy.as_ref()),
            ("paths.word_embeddings", self.word_embeddings.as_ref()),
            ("paths.cui_embeddings", self.cui_embeddings.as_ref()),
        ]
    }

    /// The configured path for `field`, or an error naming it.
    pub fn required<'a>(&self, field: &str, path: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::Invalid(format!("{field}: required by this command")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Bags kept in the negative pool.
    pub pool_size: usize,
    pub max_entry_tokens: usize,
    /// Groups no relation uses; their co-mentions form the negative pool.
    pub irrelevant_groups: BTreeSet<String>,
    /// Semantic types whose triplets are dropped.
    pub banned_semantic_types: BTreeSet<String>,
    /// Relation whose tails are extended to their ancestors.
    pub hierarchy_relation: Option<String>,
    /// Fraction of each class used for training.
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            pool_size: 1000,
            max_entry_tokens: DEFAULT_MAX_ENTRY_TOKENS,
            irrelevant_groups: BTreeSet::new(),
            banned_semantic_types: BTreeSet::new(),
            hierarchy_relation: Some("IN".to_string()),
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Section heading to relation rules for semi-structured pages.
    pub headings: Vec<HeadingRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset used by train, eval, cross-test and predict.
    pub dataset: NegativeKind,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub schema: RelationSchema,
    pub sampler: SamplerConfig,
    pub extract: ExtractConfig,
    /// Word vectors trained when `paths.word_embeddings` is unset.
    pub embeddings: SkipGramConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Corpus generated by `synth-demo`.
    pub synth: TemplateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: NegativeKind::Mix,
            threads: None,
            paths: Paths::default(),
            schema: RelationSchema::medical_default(),
            sampler: SamplerConfig::default(),
            extract: ExtractConfig::default(),
            embeddings: SkipGramConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: TemplateConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Small dimensions and a faster learning rate for the synthetic corpus.
    pub fn synth_demo() -> Self {
        let synth = TemplateConfig::default();
        PipelineConfig {
            schema: dsre_core::synth::template_schema(),
            sampler: SamplerConfig {
                pool_size: 150,
                irrelevant_groups: BTreeSet::from(["CHEM".to_string()]),
                hierarchy_relation: None,
                ..SamplerConfig::default()
            },
            embeddings: SkipGramConfig {
                dim: 32,
                ..SkipGramConfig::default()
            },
            model: ModelConfig {
                d_e: 32,
                d_r: 32,
                d_k: synth.cui_dim,
                d_c: 8,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            synth,
            ..PipelineConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Sets every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.sampler.seed = seed;
        self.embeddings.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    /// Field-level checks plus existence of every configured input file.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |field: &str, msg: &str| Err(CliError::Invalid(format!("{field}: {msg}")));
        if self.threads == Some(0) {
            return invalid("threads", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.sampler.split_fraction) {
            return invalid("sampler.split_fraction", "must lie in [0, 1]");
        }
        if self.sampler.pool_size == 0 {
            return invalid("sampler.pool_size", "must be positive");
        }
        if self.sampler.max_entry_tokens == 0 {
            return invalid("sampler.max_entry_tokens", "must be positive");
        }
        let slots = self.schema.slot_groups();
        for g in &self.sampler.irrelevant_groups {
            if !is_semantic_group(g) {
                return invalid("sampler.irrelevant_groups", &format!("unknown semantic group `{g}`"));
            }
            if slots.contains(g.as_str()) {
                return invalid("sampler.irrelevant_groups", &format!("group `{g}` is used by a relation slot"));
            }
        }
        if let Some(r) = &self.sampler.hierarchy_relation {
            if self.schema.get(r).is_none() {
                return invalid("sampler.hierarchy_relation", &format!("`{r}` is not in the schema"));
            }
        }
        for rule in &self.extract.headings {
            if self.schema.get(&rule.relation).is_none() {
                return invalid("extract.headings", &format!("relation `{}` is not in the schema", rule.relation));
            }
        }
        self.embeddings.validate().map_err(CliError::validation)?;
        let mut model = self.model.clone();
        model.num_labels = self.schema.num_labels();
        model.validate().map_err(CliError::validation)?;
        self.train.validate().map_err(CliError::validation)?;
        for (field, path) in self.paths.inputs() {
            if let Some(p) = path {
                if !p.is_file() {
                    return invalid(field, &format!("file not found: {}", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.schema.labels().into_iter().map(String::from).collect()
    }
}
