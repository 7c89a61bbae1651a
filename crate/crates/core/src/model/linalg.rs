use super::Tensor;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted softmax.
pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `t · x` for a `rows × cols` tensor.
pub(crate) fn matvec(t: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..t.rows()).map(|i| dot(t.row(i), x)).collect()
}

/// `tᵀ · y`.
pub(crate) fn matvec_t(t: &Tensor, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for (i, &yi) in y.iter().enumerate() {
        if yi != 0.0 {
            axpy(&mut out, yi, t.row(i));
        }
    }
    out
}

/// `y += a · x`.
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `t += u vᵀ`.
pub(crate) fn add_outer(t: &mut Tensor, u: &[f64], v: &[f64]) {
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            axpy(t.row_mut(i), ui, v);
        }
    }
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}
