//! Pearson correlation between two equal-length vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// Set when either vector has zero variance; `value` is then 0.
    pub degenerate: bool,
}

pub fn pcc(u: &[f64], v: &[f64]) -> Result<Correlation> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if u.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: u.len() });
    }
    let (nu, nv) = (normalized(u), normalized(v));
    match (nu, nv) {
        (Some(a), Some(b)) => Ok(Correlation { value: dot(&a, &b).clamp(-1.0, 1.0), degenerate: false }),
        _ => Ok(Correlation { value: 0.0, degenerate: true }),
    }
}

/// Centers `x` and scales it to unit norm, so the correlation of two such
/// vectors is their dot product. `None` for constant input.
pub fn normalized(x: &[f64]) -> Option<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12 * (1.0 + mean.abs())) {
        return None;
    }
    Some(centered.into_iter().map(|v| v / norm).collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
