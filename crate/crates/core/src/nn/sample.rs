//! Categorical sampling by inverse-CDF walk over the given order.

use rand::Rng;

use crate::error::{Error, Result};

/// Validate a probability vector: nonnegative entries summing to 1 within
/// 1e-9.
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Invalid("empty probability vector".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Numeric(
            "probability vector has a negative or NaN entry".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Numeric(format!(
            "probability vector sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Draw an index with probability `probs[i]`.
pub fn categorical_sample(probs: &[f64], rng: &mut impl Rng) -> Result<usize> {
    validate_distribution(probs)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left u >= acc; return the last index with positive mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .ok_or_else(|| Error::Numeric("all probabilities are zero".into()))
}

/// ln(probs[index]); a zero-probability index is an error rather than -inf.
pub fn log_prob(probs: &[f64], index: usize) -> Result<f64> {
    let p = probs
        .get(index)
        .copied()
        .ok_or_else(|| Error::Invalid(format!("index {index} out of range")))?;
    if p <= 0.0 {
        return Err(Error::Numeric(format!(
            "log probability of zero-probability index {index}"
        )));
    }
    Ok(p.ln())
}
