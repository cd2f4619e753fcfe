//! Closed-form distribution functions on plain slices.

use super::tensor::Tensor;
use super::NdError;

/// Max-shifted log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `KL(P || Q)` for categoricals given by logits, natural log.
pub fn categorical_kl(p_logits: &[f64], q_logits: &[f64]) -> Result<f64, NdError> {
    if p_logits.len() != q_logits.len() {
        return Err(NdError::LengthMismatch {
            op: "categorical_kl",
            left: p_logits.len(),
            right: q_logits.len(),
        });
    }
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    Ok(kl.max(0.0))
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over components.
pub fn gaussian_kl_unit(mu: &[f64], logvar: &[f64]) -> Result<f64, NdError> {
    if mu.len() != logvar.len() {
        return Err(NdError::LengthMismatch {
            op: "gaussian_kl_unit",
            left: mu.len(),
            right: logvar.len(),
        });
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, NdError> {
    a.same_shape(b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}
