//! Training loop, evaluation metrics and cross-testing.

mod grad_check;
mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{CuiEmbeddingTable, VectorTable};
use crate::error::{Error, Result};
use crate::model::{
    accumulate_gradients, add_l2_gradient, forward_sampled, predict_bag, sample_indices, EncodedBag, Gradients,
    ModelConfig, ModelParams, Vocab, Weights,
};
use crate::sampling::{Bag, Dataset, Split};
use crate::triplets::NA;

pub use grad_check::{
    check_gradient, check_model_gradients, grad_check, relative_error, GradCheckReport, MIN_CHECKED_COORDINATES,
    RELATIVE_ERROR_FLOOR,
};
pub use metrics::{f1_score, LabelMetrics, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Overrides the model config's penalty.
    pub l2: f64,
    pub epochs: usize,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 4e-4,
            l2: 1e-7,
            epochs: 20,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::config("train.l2", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Mean training loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub loss_log: Vec<LossRecord>,
}

impl TrainOutput {
    /// Mean batch loss per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.loss_log {
            if out.len() < r.epoch {
                out.resize(r.epoch, (0.0, 0));
            }
            let e = &mut out[r.epoch - 1];
            e.0 += r.loss;
            e.1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n as f64).collect()
    }
}

/// `epoch,batch,loss` CSV, epochs and batches counted from 1.
pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("epoch,batch,loss\n");
    for r in log {
        let _ = writeln!(s, "{},{},{:?}", r.epoch, r.batch, r.loss);
    }
    s
}

fn split_bags(dataset: &Dataset, split: Split) -> Vec<&Bag> {
    dataset.split(split).collect()
}

/// Specials, then word-table keys, then the remaining training tokens in
/// sorted order.
pub fn build_vocab(bags: &[&Bag], word_table: Option<&VectorTable>) -> Vocab {
    let mut extra = BTreeSet::new();
    for b in bags {
        for i in &b.instances {
            let m = i.masked();
            extra.extend(m.title.into_iter().chain(m.sentence).chain(m.headings));
        }
    }
    let table_keys = word_table.map(|t| t.keys().to_vec()).unwrap_or_default();
    let in_table: BTreeSet<&String> = table_keys.iter().collect();
    let rest: Vec<String> = extra.into_iter().filter(|t| !in_table.contains(t)).collect();
    Vocab::new(table_keys.iter().cloned().chain(rest))
}

fn prepare_all(params: &ModelParams, bags: &[&Bag], cui_table: &CuiEmbeddingTable) -> Result<Vec<EncodedBag>> {
    bags.par_iter().map(|b| params.prepare_bag(b, cui_table)).collect()
}

struct Adam {
    m: Weights,
    v: Weights,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(params: &mut ModelParams, g: &Gradients, lr: f64, adam: Option<&mut Adam>) {
    let w = params.weights_mut();
    match adam {
        None => {
            for (wt, gt) in w.tensors_mut().into_iter().zip(g.tensors()) {
                for (x, d) in wt.data.iter_mut().zip(&gt.data) {
                    *x -= lr * d;
                }
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - BETA1.powi(state.t);
            let c2 = 1.0 - BETA2.powi(state.t);
            let tensors = w
                .tensors_mut()
                .into_iter()
                .zip(g.tensors())
                .zip(state.m.tensors_mut())
                .zip(state.v.tensors_mut());
            for (((wt, gt), mt), vt) in tensors {
                for i in 0..wt.data.len() {
                    let d = gt.data[i];
                    mt.data[i] = BETA1 * mt.data[i] + (1.0 - BETA1) * d;
                    vt.data[i] = BETA2 * vt.data[i] + (1.0 - BETA2) * d * d;
                    let mhat = mt.data[i] / c1;
                    let vhat = vt.data[i] / c2;
                    wt.data[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mini-batch training on the train split. Bags are shuffled per epoch;
/// forwards within a batch run in parallel, gradients are summed in batch
/// order so results depend only on the seeds.
pub fn train(
    dataset: &Dataset,
    labels: &[String],
    cui_table: &CuiEmbeddingTable,
    word_table: Option<&VectorTable>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutput> {
    train_config.validate()?;
    let mut cfg = model_config.clone();
    cfg.l2 = train_config.l2;
    cfg.num_labels = labels.len();
    let bags = split_bags(dataset, Split::Train);
    if bags.is_empty() {
        return Err(Error::config("dataset", "train split is empty"));
    }
    let vocab = build_vocab(&bags, word_table);
    let mut params = ModelParams::init(cfg, labels.to_vec(), vocab, word_table)?;
    let encoded = prepare_all(&params, &bags, cui_table)?;

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(train_config.seed ^ 0x5a4d_504c_4552);
    let mut adam = match train_config.optimizer {
        Optimizer::Adam => Some(Adam {
            m: params.zero_gradients(),
            v: params.zero_gradients(),
            t: 0,
        }),
        Optimizer::Sgd => None,
    };
    let mut grads = params.zero_gradients();
    let mut loss_log = Vec::new();
    let n_s = params.config().n_s;

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (bi, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch = bi + 1;
            let picks: Vec<(usize, Vec<usize>)> = chunk
                .iter()
                .map(|&i| (i, sample_indices(encoded[i].instances.len(), n_s, &mut sample_rng)))
                .collect();
            let traces = picks
                .into_par_iter()
                .map(|(i, s)| forward_sampled(&encoded[i], &params, s))
                .collect::<Result<Vec<_>>>()?;

            grads.fill(0.0);
            let scale = 1.0 / traces.len() as f64;
            let mut data_loss = 0.0;
            for t in &traces {
                data_loss += t.data_loss;
                accumulate_gradients(t, &params, &mut grads, scale)?;
            }
            add_l2_gradient(&params, &mut grads, 1.0);
            let loss = data_loss * scale + 0.5 * params.config().l2 * params.weights().weight_norm_sq();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_log.push(LossRecord { epoch, batch, loss });
            apply_update(&mut params, &grads, train_config.learning_rate, adam.as_mut());
        }
        log::debug!("epoch {epoch}: mean loss {:.5}", {
            let l: Vec<_> = loss_log.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
            l.iter().sum::<f64>() / l.len() as f64
        });
    }
    Ok(TrainOutput { params, loss_log })
}

/// Predicted label index and probabilities for each bag, in input order.
pub fn predict_bags(
    params: &ModelParams,
    bags: &[&Bag],
    cui_table: &CuiEmbeddingTable,
) -> Result<Vec<(usize, Vec<f64>)>> {
    bags.par_iter()
        .map(|b| predict_bag(&params.prepare_unlabeled(b, cui_table)?, params))
        .collect()
}

fn evaluate_bags(params: &ModelParams, bags: &[&Bag], cui_table: &CuiEmbeddingTable) -> Result<Metrics> {
    let truth = bags
        .iter()
        .map(|b| {
            params
                .label_index(&b.label)
                .ok_or_else(|| Error::UnknownRelation(b.label.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_bags(params, bags, cui_table)?;
    let pairs: Vec<(usize, usize)> = truth.into_iter().zip(preds.into_iter().map(|p| p.0)).collect();
    Ok(Metrics::from_pairs(params.labels(), &pairs))
}

/// Metrics of `params` on one split, predicting each bag from all its
/// instances.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, split: Split, cui_table: &CuiEmbeddingTable) -> Result<Metrics> {
    let bags = split_bags(dataset, split);
    if bags.is_empty() {
        return Err(Error::config("dataset", format!("{split:?} split is empty").to_lowercase()));
    }
    evaluate_bags(params, &bags, cui_table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTestReport {
    /// Accuracy over the whole test split of the second dataset.
    pub overall_accuracy: f64,
    /// Accuracy over its `NA` test bags alone; 0 when there are none.
    pub negative_accuracy: f64,
    pub positive_accuracy: f64,
    pub negative_bags: usize,
    pub metrics: Metrics,
}

/// Evaluates a model trained on `trained_on` against the test split of
/// `other`, which must share its positive bags.
pub fn cross_test(
    params: &ModelParams,
    trained_on: &Dataset,
    other: &Dataset,
    cui_table: &CuiEmbeddingTable,
) -> Result<CrossTestReport> {
    if trained_on.positive_keys() != other.positive_keys() {
        return Err(Error::PositiveSetMismatch);
    }
    let metrics = evaluate(params, other, Split::Test, cui_table)?;
    let na = params.label_index(NA);
    let (negative_bags, negative_correct) = match na {
        Some(i) => (metrics.confusion[i].iter().sum::<usize>(), metrics.confusion[i][i]),
        None => (0, 0),
    };
    Ok(CrossTestReport {
        overall_accuracy: metrics.overall_accuracy,
        negative_accuracy: if negative_bags == 0 {
            0.0
        } else {
            negative_correct as f64 / negative_bags as f64
        },
        positive_accuracy: metrics.positive_accuracy,
        negative_bags,
        metrics,
    })
}
