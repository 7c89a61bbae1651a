use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{backward, forward_loss, EncodedBag, Gradients, ModelParams};

/// Tensors with at most this many entries are checked in full; larger ones
/// on a seeded sample of this size.
pub const MIN_CHECKED_COORDINATES: usize = 200;

/// Lower bound on the denominator of [`relative_error`], so coordinates with
/// near-zero gradients are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central differences of `f` at `x` on `coords`, compared to `grad`.
/// Returns the largest relative error and the coordinate it occurred at.
pub fn check_gradient<F>(mut f: F, x: &[f64], grad: &[f64], epsilon: f64, coords: &[usize]) -> (f64, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst = (0.0, coords.first().copied().unwrap_or(0));
    for &i in coords {
        probe[i] = x[i] + epsilon;
        let plus = f(&probe);
        probe[i] = x[i] - epsilon;
        let minus = f(&probe);
        probe[i] = x[i];
        let err = relative_error(grad[i], (plus - minus) / (2.0 * epsilon));
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    /// Number of coordinates compared.
    pub checked: usize,
}

fn coordinates(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MIN_CHECKED_COORDINATES {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, MIN_CHECKED_COORDINATES).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares `analytic` against central differences of the bag loss.
/// Instance subsampling is replayed from `seed` for every evaluation.
pub fn check_model_gradients(
    params: &ModelParams,
    bag: &EncodedBag,
    analytic: &Gradients,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut coord_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = params.weights().tensors().iter().map(|t| t.name.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let x = params.weights().tensors()[ti].data.clone();
        let coords = coordinates(x.len(), &mut coord_rng);
        let mut failure = None;
        let (err, idx) = check_gradient(
            |v| {
                probe.weights_mut().tensors_mut()[ti].data.copy_from_slice(v);
                match forward_loss(bag, &probe, &mut ChaCha8Rng::seed_from_u64(seed)) {
                    Ok(t) => t.loss,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &x,
            &analytic.tensors()[ti].data,
            epsilon,
            &coords,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        probe.weights_mut().tensors_mut()[ti].data.copy_from_slice(&x);
        report.checked += coords.len();
        if err > report.max_relative_error || report.worst_tensor.is_empty() {
            report.max_relative_error = err;
            report.worst_tensor = name.clone();
            report.worst_index = idx;
        }
    }
    Ok(report)
}

/// Finite-difference check of [`backward`] on one bag.
pub fn grad_check(params: &ModelParams, bag: &EncodedBag, epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    let trace = forward_loss(bag, params, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let analytic = backward(&trace, params)?;
    check_model_gradients(params, bag, &analytic, epsilon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderVariant, ModelConfig, Vocab};
    use rand::Rng;

    #[test]
    fn linear_function_is_exact() {
        let a = [0.5, -1.25, 2.0, 3.5];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(x, a)| x * a).sum::<f64>() + 0.75;
        let (err, _) = check_gradient(f, &[0.1, 0.2, -0.3, 0.4], &a, 1e-5, &[0, 1, 2, 3]);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2e-7, 1e-7) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    fn fixture(variant: EncoderVariant, seed: u64) -> (ModelParams, EncodedBag) {
        let cfg = ModelConfig {
            encoder_variant: variant,
            d_e: 6,
            d_r: 5,
            d_k: 7,
            d_c: 3,
            n_s: 2,
            num_labels: 4,
            l2: 1e-3,
            seed,
            ..ModelConfig::default()
        };
        let labels = ["NA", "A", "B", "C"].map(String::from).to_vec();
        let mut p = ModelParams::init(cfg, labels, Vocab::new(["a", "b", "c"]), None).unwrap();
        p.weights_mut().scale(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = p.vocab().len();
        let bag = EncodedBag {
            instances: (0..4)
                .map(|_| (0..rng.gen_range(2..6)).map(|_| rng.gen_range(0..v)).collect())
                .collect(),
            head: (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            tail: (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: 2,
        };
        (p, bag)
    }

    #[test]
    fn model_gradients_pass() {
        for variant in EncoderVariant::ALL {
            let (p, bag) = fixture(variant, 4);
            let r = grad_check(&p, &bag, 1e-5, 9).unwrap();
            assert!(r.max_relative_error < 1e-4, "{variant:?}: {r:?}");
            // bag of 4 with n_s = 2 exercises the replayed subsampling
            assert!(r.checked > 200);
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (p, bag) = fixture(EncoderVariant::AvgEmbedProj, 1);
        let trace = forward_loss(&bag, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut g = backward(&trace, &p).unwrap();
        let b = &mut g.output_bias.data;
        let i = (0..b.len()).max_by(|&x, &y| b[x].abs().total_cmp(&b[y].abs())).unwrap();
        b[i] *= 2.0;
        let r = check_model_gradients(&p, &bag, &g, 1e-5, 3).unwrap();
        assert!(r.max_relative_error > 0.1);
        assert_eq!(r.worst_tensor, "output_bias");
    }
}
