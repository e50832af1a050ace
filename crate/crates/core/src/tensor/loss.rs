use super::{Real, Result, Tensor, TensorError};

/// Numerically stable softmax over a flat logit vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Negative log-likelihood of `target` under `softmax(logits)` and its
/// gradient with respect to the logits, `softmax(logits) - one_hot(target)`.
pub fn softmax_nll<T: Real>(logits: &Tensor<T>, target: usize) -> Result<(T, Tensor<T>)> {
    let k = logits.len();
    if target >= k {
        return Err(TensorError::Index { index: target, classes: k });
    }
    let z = logits.data();
    let mut arg = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[arg] {
            arg = i;
        }
    }
    let max = z[arg];
    // log-sum-exp as max + ln(1 + rest), which keeps tiny losses accurate.
    let rest: T = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let loss = (max - z[target]) + rest.ln_1p();
    let mut grad = softmax(z);
    grad[target] -= T::one();
    Ok((loss.max(T::zero()), Tensor::from_vec(logits.shape(), grad)?))
}
