//! Label smoothing and the cross-entropy it feeds.

use infosync_tensor::ops::log_sum_exp;

use crate::error::{Error, Result};

/// Smoothed target distribution: `q_y = 1 - (N-1)·ε/N`, `q_i = ε/N` otherwise.
pub fn smoothed_targets(label: usize, classes: usize, epsilon: f64) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::InvalidInput(format!("label {label} out of range for {classes} classes")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!("smoothing {epsilon} outside [0, 1)")));
    }
    let n = classes as f64;
    let mut q = vec![epsilon / n; classes];
    q[label] = 1.0 - (n - 1.0) * epsilon / n;
    Ok(q)
}

/// `-Σ q_i log softmax(logits)_i` in log-sum-exp form.
pub fn cross_entropy(logits: &[f64], q: &[f64]) -> Result<f64> {
    if logits.len() != q.len() || logits.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} logits against {} targets",
            logits.len(),
            q.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let lse = log_sum_exp(logits);
    Ok(q.iter().zip(logits).map(|(qi, z)| qi * (lse - z)).sum())
}

/// Shannon entropy in nats, the lower bound of [`cross_entropy`] over logits.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
