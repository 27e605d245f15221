use serde::{Deserialize, Serialize};

use super::EvaluationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub mean: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Quantile of already sorted values with linear interpolation between
/// closest ranks (`h = (len - 1) q`).
pub fn quantile(sorted: &[f64], q: f64) -> Result<f64, EvaluationError> {
    if sorted.is_empty() {
        return Err(EvaluationError::EmptySample);
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn describe(values: &[f64]) -> Result<Descriptive, EvaluationError> {
    if values.is_empty() {
        return Err(EvaluationError::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Descriptive {
        count: v.len(),
        min: v[0],
        q25: quantile(&v, 0.25)?,
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: quantile(&v, 0.5)?,
        q75: quantile(&v, 0.75)?,
        max: v[v.len() - 1],
    })
}
