use super::Real;

/// Max-shifted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Returns `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
///
/// Panics if `label` is out of range.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[label] -= T::one();
    (loss, grad)
}
