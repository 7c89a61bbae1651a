use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sampling::Instance;

use super::linalg::{add_outer, argmax, axpy, dot, log_sum_exp, matvec, matvec_t, softmax};
use super::{EncodedBag, EncoderWeights, FusionMode, Gradients, ModelParams};

/// Intermediates of one instance encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCache {
    pub ids: Vec<usize>,
    /// Pooled token embedding (empty for the bag-of-words encoder).
    pub pooled: Vec<f64>,
    /// Token attention weights (token attention encoder only).
    pub token_weights: Vec<f64>,
    /// Sentence vector.
    pub r: Vec<f64>,
}

/// Encodes a token-id sequence to a sentence vector.
pub fn encode_ids(params: &ModelParams, ids: &[usize]) -> Result<EncoderCache> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let v = params.vocab().len();
    if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
        return Err(Error::DimensionMismatch(bad, v));
    }
    let d_r = params.config().d_r;
    let cache = match &params.weights().encoder {
        EncoderWeights::BowLinear { bow } => {
            let mut r = vec![0.0; d_r];
            for &id in ids {
                for (k, rk) in r.iter_mut().enumerate() {
                    *rk += bow.get(k, id);
                }
            }
            EncoderCache {
                ids: ids.to_vec(),
                pooled: Vec::new(),
                token_weights: Vec::new(),
                r,
            }
        }
        EncoderWeights::AvgEmbedProj { embedding, proj, bias } => {
            let mut h = vec![0.0; embedding.cols()];
            let w = 1.0 / ids.len() as f64;
            for &id in ids {
                axpy(&mut h, w, embedding.row(id));
            }
            let mut r = matvec(proj, &h);
            axpy(&mut r, 1.0, &bias.data);
            EncoderCache {
                ids: ids.to_vec(),
                pooled: h,
                token_weights: Vec::new(),
                r,
            }
        }
        EncoderWeights::TokenAttention {
            embedding,
            query,
            proj,
            bias,
        } => {
            let scores: Vec<f64> = ids.iter().map(|&id| dot(&query.data, embedding.row(id))).collect();
            let a = softmax(&scores);
            let mut h = vec![0.0; embedding.cols()];
            for (&id, &at) in ids.iter().zip(&a) {
                axpy(&mut h, at, embedding.row(id));
            }
            let mut r = matvec(proj, &h);
            axpy(&mut r, 1.0, &bias.data);
            EncoderCache {
                ids: ids.to_vec(),
                pooled: h,
                token_weights: a,
                r,
            }
        }
    };
    Ok(cache)
}

/// Sentence vector of a (masked) instance.
pub fn encode_sentence(instance: &Instance, params: &ModelParams) -> Result<Vec<f64>> {
    let ids = params.vocab().encode_instance(instance)?;
    Ok(encode_ids(params, &ids)?.r)
}

/// Attention pooling: `α = softmax(Rᵀ q)`, `r = R α`, with the columns of
/// `R` given as slices.
pub fn aggregate_bag<C: AsRef<[f64]>>(columns: &[C], query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = columns.first() else {
        return Err(Error::EmptyBag);
    };
    let d = first.as_ref().len();
    if let Some(c) = columns.iter().find(|c| c.as_ref().len() != d) {
        return Err(Error::DimensionMismatch(c.as_ref().len(), d));
    }
    if query.len() != d {
        return Err(Error::DimensionMismatch(query.len(), d));
    }
    let scores: Vec<f64> = columns.iter().map(|c| dot(c.as_ref(), query)).collect();
    let alpha = softmax(&scores);
    let mut r = vec![0.0; d];
    for (c, &a) in columns.iter().zip(&alpha) {
        axpy(&mut r, a, c.as_ref());
    }
    Ok((r, alpha))
}

/// Intermediates of the fusion and output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCache {
    pub c_head: Vec<f64>,
    pub c_tail: Vec<f64>,
    /// `[r; c_head; c_tail]` after the fusion-mode mask.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn block_masks(mode: FusionMode) -> (f64, f64) {
    match mode {
        FusionMode::Full => (1.0, 1.0),
        FusionMode::TextOnly => (1.0, 0.0),
        FusionMode::CuiOnly => (0.0, 1.0),
    }
}

/// `c_j = W_j k_j + b_j`, `f = [r; c_1; c_2]`, `ŷ = softmax(W f + b)`.
pub fn fuse_and_classify(
    r: &[f64],
    head: &[f64],
    tail: &[f64],
    params: &ModelParams,
) -> Result<(Vec<f64>, FusionCache)> {
    let cfg = params.config();
    for (len, want) in [(r.len(), cfg.d_r), (head.len(), cfg.d_k), (tail.len(), cfg.d_k)] {
        if len != want {
            return Err(Error::DimensionMismatch(len, want));
        }
    }
    let w = params.weights();
    let mut c_head = matvec(&w.head_proj, head);
    axpy(&mut c_head, 1.0, &w.head_bias.data);
    let mut c_tail = matvec(&w.tail_proj, tail);
    axpy(&mut c_tail, 1.0, &w.tail_bias.data);

    let (mr, mc) = block_masks(cfg.fusion);
    let mut features = Vec::with_capacity(cfg.d_r + 2 * cfg.d_c);
    features.extend(r.iter().map(|x| x * mr));
    features.extend(c_head.iter().map(|x| x * mc));
    features.extend(c_tail.iter().map(|x| x * mc));

    let mut logits = matvec(&w.output, &features);
    axpy(&mut logits, 1.0, &w.output_bias.data);
    let probs = softmax(&logits);
    Ok((
        probs.clone(),
        FusionCache {
            c_head,
            c_tail,
            features,
            logits,
            probs,
        },
    ))
}

/// Everything needed to differentiate one bag's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Generation of the params the trace was recorded against.
    pub generation: u64,
    pub label: usize,
    /// Indices of the sampled instances within the bag.
    pub sampled: Vec<usize>,
    pub instances: Vec<EncoderCache>,
    /// Bag attention weights.
    pub alpha: Vec<f64>,
    pub bag_vector: Vec<f64>,
    pub fusion: FusionCache,
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    /// Cross-entropy part of the loss.
    pub data_loss: f64,
    pub loss: f64,
}

impl ForwardTrace {
    pub fn probs(&self) -> &[f64] {
        &self.fusion.probs
    }
}

fn run(params: &ModelParams, bag: &EncodedBag, sampled: Vec<usize>) -> Result<ForwardTrace> {
    let instances = sampled
        .iter()
        .map(|&i| encode_ids(params, &bag.instances[i]))
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<&[f64]> = instances.iter().map(|c| c.r.as_slice()).collect();
    let (bag_vector, alpha) = aggregate_bag(&columns, &params.weights().bag_query.data)?;
    let (_, fusion) = fuse_and_classify(&bag_vector, &bag.head, &bag.tail, params)?;
    if bag.label >= fusion.logits.len() {
        return Err(Error::DimensionMismatch(bag.label, fusion.logits.len()));
    }
    let data_loss = log_sum_exp(&fusion.logits) - fusion.logits[bag.label];
    Ok(ForwardTrace {
        generation: params.generation(),
        label: bag.label,
        sampled,
        instances,
        alpha,
        bag_vector,
        fusion,
        head: bag.head.clone(),
        tail: bag.tail.clone(),
        data_loss,
        loss: data_loss,
    })
}

/// Instance indices used for one training forward: all of them when the
/// bag has at most `n_s`, else `n_s` drawn without replacement, sorted.
pub(crate) fn sample_indices<R: Rng>(m: usize, n_s: usize, rng: &mut R) -> Vec<usize> {
    if m <= n_s {
        (0..m).collect()
    } else {
        let mut idx = sample(rng, m, n_s).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Forward pass on the given instances; `loss` holds only the
/// cross-entropy term.
pub(crate) fn forward_sampled(bag: &EncodedBag, params: &ModelParams, sampled: Vec<usize>) -> Result<ForwardTrace> {
    if sampled.is_empty() {
        return Err(Error::EmptyBag);
    }
    run(params, bag, sampled)
}

/// Cross-entropy of the bag's label plus `(l2/2)·‖weights‖²`, biases
/// excluded.
pub fn forward_loss<R: Rng>(bag: &EncodedBag, params: &ModelParams, rng: &mut R) -> Result<ForwardTrace> {
    if bag.instances.is_empty() {
        return Err(Error::EmptyBag);
    }
    let sampled = sample_indices(bag.instances.len(), params.config().n_s, rng);
    let mut t = run(params, bag, sampled)?;
    t.loss = t.data_loss + 0.5 * params.config().l2 * params.weights().weight_norm_sq();
    Ok(t)
}

/// Prediction from all instances of the bag; ties go to the lowest label.
pub fn predict_bag(bag: &EncodedBag, params: &ModelParams) -> Result<(usize, Vec<f64>)> {
    if bag.instances.is_empty() {
        return Err(Error::EmptyBag);
    }
    let t = run(params, bag, (0..bag.instances.len()).collect())?;
    Ok((argmax(&t.fusion.probs), t.fusion.probs))
}

/// Exact gradients of `trace.loss` with respect to every tensor.
pub fn backward(trace: &ForwardTrace, params: &ModelParams) -> Result<Gradients> {
    let mut g = params.zero_gradients();
    accumulate_gradients(trace, params, &mut g, 1.0)?;
    add_l2_gradient(params, &mut g, 1.0);
    Ok(g)
}

/// Adds `scale · l2 · w` for every non-bias tensor.
pub(crate) fn add_l2_gradient(params: &ModelParams, g: &mut Gradients, scale: f64) {
    let l2 = params.config().l2;
    if l2 == 0.0 {
        return;
    }
    for (gt, wt) in g.tensors_mut().into_iter().zip(params.weights().tensors()) {
        if !wt.is_bias() {
            axpy(&mut gt.data, scale * l2, &wt.data);
        }
    }
}

/// Adds `scale ·` the cross-entropy gradient of one trace into `g`.
pub(crate) fn accumulate_gradients(
    trace: &ForwardTrace,
    params: &ModelParams,
    g: &mut Gradients,
    scale: f64,
) -> Result<()> {
    if trace.generation != params.generation() {
        return Err(Error::StaleTrace {
            trace: trace.generation,
            params: params.generation(),
        });
    }
    let cfg = params.config();
    let w = params.weights();
    let (d_r, d_c) = (cfg.d_r, cfg.d_c);

    let mut dz = trace.fusion.probs.clone();
    dz[trace.label] -= 1.0;
    dz.iter_mut().for_each(|x| *x *= scale);
    add_outer(&mut g.output, &dz, &trace.fusion.features);
    axpy(&mut g.output_bias.data, 1.0, &dz);

    let mut df = matvec_t(&w.output, &dz);
    let (mr, mc) = block_masks(cfg.fusion);
    df[..d_r].iter_mut().for_each(|x| *x *= mr);
    df[d_r..].iter_mut().for_each(|x| *x *= mc);
    let (dr, dc) = df.split_at(d_r);
    let (dc_head, dc_tail) = dc.split_at(d_c);
    add_outer(&mut g.head_proj, dc_head, &trace.head);
    axpy(&mut g.head_bias.data, 1.0, dc_head);
    add_outer(&mut g.tail_proj, dc_tail, &trace.tail);
    axpy(&mut g.tail_bias.data, 1.0, dc_tail);

    if mr == 0.0 {
        return Ok(());
    }

    // bag attention
    let dalpha: Vec<f64> = trace.instances.iter().map(|c| dot(&c.r, dr)).collect();
    let mean = dot(&trace.alpha, &dalpha);
    let dscore: Vec<f64> = trace
        .alpha
        .iter()
        .zip(&dalpha)
        .map(|(a, da)| a * (da - mean))
        .collect();
    for (c, &ds) in trace.instances.iter().zip(&dscore) {
        axpy(&mut g.bag_query.data, ds, &c.r);
    }

    for ((c, &a), &ds) in trace.instances.iter().zip(&trace.alpha).zip(&dscore) {
        let mut dri = vec![0.0; d_r];
        axpy(&mut dri, a, dr);
        axpy(&mut dri, ds, &w.bag_query.data);
        encoder_backward(c, &dri, params, g);
    }
    Ok(())
}

fn encoder_backward(c: &EncoderCache, dr: &[f64], params: &ModelParams, g: &mut Gradients) {
    match (&params.weights().encoder, &mut g.encoder) {
        (EncoderWeights::BowLinear { .. }, EncoderWeights::BowLinear { bow: gbow }) => {
            let v = gbow.cols();
            for &id in &c.ids {
                for (k, d) in dr.iter().enumerate() {
                    gbow.data[k * v + id] += d;
                }
            }
        }
        (
            EncoderWeights::AvgEmbedProj { proj, .. },
            EncoderWeights::AvgEmbedProj {
                embedding: gemb,
                proj: gproj,
                bias: gbias,
            },
        ) => {
            add_outer(gproj, dr, &c.pooled);
            axpy(&mut gbias.data, 1.0, dr);
            let dh = matvec_t(proj, dr);
            let w = 1.0 / c.ids.len() as f64;
            for &id in &c.ids {
                axpy(gemb.row_mut(id), w, &dh);
            }
        }
        (
            EncoderWeights::TokenAttention {
                embedding,
                query,
                proj,
                ..
            },
            EncoderWeights::TokenAttention {
                embedding: gemb,
                query: gquery,
                proj: gproj,
                bias: gbias,
            },
        ) => {
            add_outer(gproj, dr, &c.pooled);
            axpy(&mut gbias.data, 1.0, dr);
            let dh = matvec_t(proj, dr);
            let da: Vec<f64> = c.ids.iter().map(|&id| dot(embedding.row(id), &dh)).collect();
            let mean = dot(&c.token_weights, &da);
            for ((&id, &a), &dat) in c.ids.iter().zip(&c.token_weights).zip(&da) {
                let ds = a * (dat - mean);
                axpy(gemb.row_mut(id), a, &dh);
                axpy(gemb.row_mut(id), ds, &query.data);
                axpy(&mut gquery.data, ds, embedding.row(id));
            }
        }
        _ => unreachable!("gradient layout always matches the params"),
    }
}
