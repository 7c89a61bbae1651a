//! Bag-level relation classifier.
//!
//! Each instance is encoded to a vector, the vectors of a bag are pooled by
//! a learned attention query, and the pooled vector is concatenated with
//! projections of the two entities' concept embeddings before a softmax
//! layer. Gradients are computed by hand in `f64`.

mod forward;
mod linalg;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{CuiEmbeddingTable, VectorTable};
use crate::error::{Error, Result};
use crate::lexicon::SEMANTIC_GROUPS;
use crate::sampling::{mask_token, Bag, Instance};

pub use forward::{
    aggregate_bag, backward, encode_ids, encode_sentence, forward_loss, fuse_and_classify, predict_bag,
    EncoderCache, ForwardTrace, FusionCache,
};
pub(crate) use forward::{accumulate_gradients, add_l2_gradient, forward_sampled, sample_indices};

pub const UNK: &str = "[UNK]";
pub const SEP: &str = "[SEP]";

/// Version tag of the checkpoint container.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    BowLinear,
    AvgEmbedProj,
    TokenAttention,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 3] = [
        EncoderVariant::BowLinear,
        EncoderVariant::AvgEmbedProj,
        EncoderVariant::TokenAttention,
    ];
}

/// Which blocks of the fused feature vector reach the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Full,
    TextOnly,
    CuiOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_variant: EncoderVariant,
    pub fusion: FusionMode,
    /// Token embedding size.
    pub d_e: usize,
    /// Sentence and bag vector size.
    pub d_r: usize,
    /// Concept embedding size.
    pub d_k: usize,
    /// Projected concept size.
    pub d_c: usize,
    /// Instances sampled per bag during training.
    pub n_s: usize,
    /// Output labels, `NA` included.
    pub num_labels: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_variant: EncoderVariant::AvgEmbedProj,
            fusion: FusionMode::Full,
            d_e: 128,
            d_r: 200,
            d_k: 1000,
            d_c: 100,
            n_s: 10,
            num_labels: 5,
            l2: 1e-7,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("model.d_e", self.d_e),
            ("model.d_r", self.d_r),
            ("model.d_k", self.d_k),
            ("model.d_c", self.d_c),
            ("model.n_s", self.n_s),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.num_labels < 2 {
            return Err(Error::config("model.num_labels", "must be at least 2"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::config("model.l2", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Token → row index. Special tokens come first: `[UNK]`, `[SEP]`, then one
/// mask token per semantic group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            v.push(t);
        }
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::from(Self::specials());
        for w in words {
            v.push(w.into());
        }
        v
    }

    pub fn specials() -> Vec<String> {
        let mut s = vec![UNK.to_string(), SEP.to_string()];
        s.extend(SEMANTIC_GROUPS.iter().map(|g| mask_token(g)));
        s
    }

    fn push(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row of `token`, `[UNK]` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    /// Ids of `title ⊕ sentence ⊕ [SEP] ⊕ headings`, entities masked.
    pub fn encode_instance(&self, instance: &Instance) -> Result<Vec<usize>> {
        let m = instance.masked();
        if m.title.is_empty() && m.sentence.is_empty() && m.headings.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut ids: Vec<usize> = m.title.iter().chain(&m.sentence).map(|t| self.id(t)).collect();
        ids.push(self.id(SEP));
        ids.extend(m.headings.iter().map(|t| self.id(t)));
        Ok(ids)
    }
}

/// Dense row-major tensor with a role name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    /// Biases are excluded from the weight penalty.
    pub fn is_bias(&self) -> bool {
        self.name.ends_with("_bias")
    }
}

/// Encoder tensors; which ones exist depends on the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderWeights {
    /// `r = bow · counts`, `bow` is `d_r × V`.
    BowLinear { bow: Tensor },
    /// `r = proj · mean(embedding rows) + bias`.
    AvgEmbedProj {
        embedding: Tensor,
        proj: Tensor,
        bias: Tensor,
    },
    /// Attention over token embeddings with a learned query, then projected.
    TokenAttention {
        embedding: Tensor,
        query: Tensor,
        proj: Tensor,
        bias: Tensor,
    },
}

/// Every trainable tensor of the model. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub encoder: EncoderWeights,
    /// Bag attention query.
    pub bag_query: Tensor,
    pub head_proj: Tensor,
    pub head_bias: Tensor,
    pub tail_proj: Tensor,
    pub tail_bias: Tensor,
    pub output: Tensor,
    pub output_bias: Tensor,
}

impl Weights {
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let (v, de, dr, dk, dc, l) = (
            vocab_size,
            config.d_e,
            config.d_r,
            config.d_k,
            config.d_c,
            config.num_labels,
        );
        let encoder = match config.encoder_variant {
            EncoderVariant::BowLinear => EncoderWeights::BowLinear {
                bow: Tensor::zeros("bow", &[dr, v]),
            },
            EncoderVariant::AvgEmbedProj => EncoderWeights::AvgEmbedProj {
                embedding: Tensor::zeros("embedding", &[v, de]),
                proj: Tensor::zeros("sentence_proj", &[dr, de]),
                bias: Tensor::zeros("sentence_bias", &[dr]),
            },
            EncoderVariant::TokenAttention => EncoderWeights::TokenAttention {
                embedding: Tensor::zeros("embedding", &[v, de]),
                query: Tensor::zeros("token_query", &[de]),
                proj: Tensor::zeros("sentence_proj", &[dr, de]),
                bias: Tensor::zeros("sentence_bias", &[dr]),
            },
        };
        Weights {
            encoder,
            bag_query: Tensor::zeros("bag_query", &[dr]),
            head_proj: Tensor::zeros("head_proj", &[dc, dk]),
            head_bias: Tensor::zeros("head_bias", &[dc]),
            tail_proj: Tensor::zeros("tail_proj", &[dc, dk]),
            tail_bias: Tensor::zeros("tail_bias", &[dc]),
            output: Tensor::zeros("output", &[l, dr + 2 * dc]),
            output_bias: Tensor::zeros("output_bias", &[l]),
        }
    }

    /// All tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = match &self.encoder {
            EncoderWeights::BowLinear { bow } => vec![bow],
            EncoderWeights::AvgEmbedProj { embedding, proj, bias } => vec![embedding, proj, bias],
            EncoderWeights::TokenAttention {
                embedding,
                query,
                proj,
                bias,
            } => vec![embedding, query, proj, bias],
        };
        v.extend([
            &self.bag_query,
            &self.head_proj,
            &self.head_bias,
            &self.tail_proj,
            &self.tail_bias,
            &self.output,
            &self.output_bias,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = match &mut self.encoder {
            EncoderWeights::BowLinear { bow } => vec![bow],
            EncoderWeights::AvgEmbedProj { embedding, proj, bias } => vec![embedding, proj, bias],
            EncoderWeights::TokenAttention {
                embedding,
                query,
                proj,
                bias,
            } => vec![embedding, query, proj, bias],
        };
        v.extend([
            &mut self.bag_query,
            &mut self.head_proj,
            &mut self.head_bias,
            &mut self.tail_proj,
            &mut self.tail_bias,
            &mut self.output,
            &mut self.output_bias,
        ]);
        v
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Sum of squares of the non-bias tensors.
    pub fn weight_norm_sq(&self) -> f64 {
        self.tensors()
            .into_iter()
            .filter(|t| !t.is_bias())
            .flat_map(|t| &t.data)
            .map(|x| x * x)
            .sum()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradients share the layout of [`Weights`].
pub type Gradients = Weights;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Trained or initialized model: configuration, labels, vocabulary and
/// weights. Every mutable borrow of the weights bumps a generation counter
/// so traces recorded against older values are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    labels: Vec<String>,
    vocab: Vocab,
    weights: Weights,
    generation: u64,
}

impl ModelParams {
    /// All-zero weights.
    pub fn zeros(config: ModelConfig, labels: Vec<String>, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if labels.len() != config.num_labels {
            return Err(Error::config(
                "model.num_labels",
                format!("{} labels given, config says {}", labels.len(), config.num_labels),
            ));
        }
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let weights = Weights::zeros(&config, vocab.len());
        Ok(ModelParams {
            config,
            labels,
            vocab,
            weights,
            generation: next_generation(),
        })
    }

    /// Uniform(−0.05, 0.05) from the config seed, with embedding rows copied
    /// from `word_table` for the tokens it covers.
    pub fn init(
        config: ModelConfig,
        labels: Vec<String>,
        vocab: Vocab,
        word_table: Option<&VectorTable>,
    ) -> Result<Self> {
        let mut p = Self::zeros(config, labels, vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed);
        for t in p.weights.tensors_mut() {
            for x in &mut t.data {
                *x = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        if let Some(table) = word_table {
            let d_e = p.config.d_e;
            let vocab = p.vocab.clone();
            if let EncoderWeights::AvgEmbedProj { embedding, .. } | EncoderWeights::TokenAttention { embedding, .. } =
                &mut p.weights.encoder
            {
                if table.dim() != d_e {
                    return Err(Error::DimensionMismatch(table.dim(), d_e));
                }
                for (i, tok) in vocab.tokens().iter().enumerate() {
                    if let Some(v) = table.get(tok) {
                        embedding.row_mut(i).copy_from_slice(v);
                    }
                }
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        self.generation = next_generation();
        &mut self.weights
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_fusion(&mut self, fusion: FusionMode) {
        self.config.fusion = fusion;
        self.generation = next_generation();
    }

    pub fn zero_gradients(&self) -> Gradients {
        Weights::zeros(&self.config, self.vocab.len())
    }

    /// Encodes a sampled bag: instance token ids, entity vectors, label.
    pub fn prepare_bag(&self, bag: &Bag, cui_table: &CuiEmbeddingTable) -> Result<EncodedBag> {
        let label = self
            .label_index(&bag.label)
            .ok_or_else(|| Error::UnknownRelation(bag.label.clone()))?;
        Ok(EncodedBag {
            label,
            ..self.prepare_unlabeled(bag, cui_table)?
        })
    }

    /// Like [`Self::prepare_bag`] but ignores the bag's label (set to 0).
    pub fn prepare_unlabeled(&self, bag: &Bag, cui_table: &CuiEmbeddingTable) -> Result<EncodedBag> {
        if cui_table.dim() != self.config.d_k {
            return Err(Error::DimensionMismatch(cui_table.dim(), self.config.d_k));
        }
        let instances = bag
            .instances
            .iter()
            .map(|i| self.vocab.encode_instance(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedBag {
            instances,
            head: cui_table.cui_embedding(&bag.head_cui).to_vec(),
            tail: cui_table.cui_embedding(&bag.tail_cui).to_vec(),
            label: 0,
        })
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            labels: self.labels.clone(),
            vocab: self.vocab.clone(),
            tensors: self.weights.tensors().into_iter().cloned().collect(),
        };
        Ok(serde_json::to_vec(&ckpt)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(
                "checkpoint.format_version",
                format!("unsupported version {}", ckpt.format_version),
            ));
        }
        let mut p = Self::zeros(ckpt.config, ckpt.labels, ckpt.vocab)?;
        let mut stored: HashMap<String, Tensor> = ckpt.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for t in p.weights.tensors_mut() {
            let found = stored.remove(&t.name).ok_or_else(|| Error::ShapeMismatch {
                name: t.name.clone(),
                expected: t.shape.clone(),
                found: Vec::new(),
            })?;
            if found.shape != t.shape || found.data.len() != t.data.len() {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    expected: t.shape.clone(),
                    found: found.shape,
                });
            }
            t.data = found.data;
        }
        if let Some(name) = stored.into_keys().min() {
            return Err(Error::ShapeMismatch {
                name,
                expected: Vec::new(),
                found: Vec::new(),
            });
        }
        if !p.weights.all_finite() {
            return Err(Error::config("checkpoint", "non-finite parameter values"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    labels: Vec<String>,
    vocab: Vocab,
    tensors: Vec<Tensor>,
}

/// A bag in model input form.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBag {
    pub instances: Vec<Vec<usize>>,
    /// Concept embedding of the head entity.
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    pub label: usize,
}
