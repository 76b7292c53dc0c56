//! Empirical entropies of discretized matrices, in bits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn entropy_of_counts<I: IntoIterator<Item = usize>>(counts: I, total: usize) -> f64 {
    let total = total as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

fn check_rectangular(m: &[Vec<u32>]) -> Result<usize> {
    let first = m.first().ok_or_else(|| Error::Empty("discrete matrix".into()))?;
    let w = first.len();
    if let Some(r) = m.iter().find(|r| r.len() != w) {
        return Err(Error::DimensionMismatch { expected: w, got: r.len() });
    }
    Ok(w)
}

/// `H(X_1, ..., X_n)` from the joint frequency of whole rows. This equals the
/// chain-rule sum of conditional entropies.
pub fn joint_entropy(m: &[Vec<u32>]) -> Result<f64> {
    check_rectangular(m)?;
    let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
    for row in m {
        *counts.entry(row.as_slice()).or_default() += 1;
    }
    Ok(entropy_of_counts(counts.into_values(), m.len()))
}

/// `H(X_j)` for every column.
pub fn marginal_entropies(m: &[Vec<u32>]) -> Result<Vec<f64>> {
    let w = check_rectangular(m)?;
    Ok(column_counts(m, w).iter().map(|c| entropy_of_counts(c.values().copied(), m.len())).collect())
}

fn column_counts(m: &[Vec<u32>], w: usize) -> Vec<BTreeMap<u32, usize>> {
    let mut counts = vec![BTreeMap::new(); w];
    for row in m {
        for (c, &v) in counts.iter_mut().zip(row) {
            *c.entry(v).or_default() += 1;
        }
    }
    counts
}

/// Per-row surprisal `-Σ_j log2 p̂_j(x_j)` under the empirical marginals.
pub fn surprisal(m: &[Vec<u32>]) -> Result<Vec<f64>> {
    let w = check_rectangular(m)?;
    let counts = column_counts(m, w);
    let total = m.len() as f64;
    Ok(m.iter()
        .map(|row| {
            row.iter()
                .zip(&counts)
                .map(|(v, c)| -(c[v] as f64 / total).log2())
                .sum::<f64>()
                .max(0.0)
        })
        .collect())
}

/// Information carried by each row, in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoVector {
    pub per_tuple: Vec<f64>,
    pub total: f64,
}

impl InfoVector {
    pub fn new(per_tuple: Vec<f64>) -> Self {
        let total = per_tuple.iter().sum();
        Self { per_tuple, total }
    }
}

/// Surprisal of every tuple, rescaled so the vector sums to
/// `joint_entropy(m) * m`. A matrix without any variation carries no
/// information and yields zeros.
pub fn per_tuple_info(m: &[Vec<u32>]) -> Result<InfoVector> {
    let raw = surprisal(m)?;
    let raw_total: f64 = raw.iter().sum();
    let target = joint_entropy(m)? * m.len() as f64;
    if raw_total <= 0.0 {
        return Ok(InfoVector::new(vec![0.0; raw.len()]));
    }
    let scale = target / raw_total;
    Ok(InfoVector::new(raw.into_iter().map(|s| s * scale).collect()))
}
