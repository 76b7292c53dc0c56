//! Surrogate-tree extraction estimate used as the comparison baseline.
//!
//! A CART tree is fit to the logged `(q, label(z))` pairs; its agreement
//! with the deployed model on held-out inputs is reported as the estimate.

use serde::{Deserialize, Serialize};

use super::QueryLog;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Classifier;

pub const WARNING_MAX_DEPTH: usize = 6;
const MIN_LOG: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DecisionTree {
    Leaf(u8),
    Split { feature: usize, threshold: f64, left: Box<DecisionTree>, right: Box<DecisionTree> },
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn majority(counts: [usize; 2]) -> u8 {
    u8::from(counts[1] >= counts[0])
}

impl DecisionTree {
    /// Gini-impurity CART with binary splits at midpoints between distinct
    /// feature values. Ties between candidate splits keep the first one found
    /// (lowest feature index, lowest threshold).
    pub fn fit(inputs: &[Vec<f64>], labels: &[u8], max_depth: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("tree training set".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: labels.len() });
        }
        let idx: Vec<usize> = (0..inputs.len()).collect();
        Ok(Self::grow(inputs, labels, idx, max_depth))
    }

    fn grow(inputs: &[Vec<f64>], labels: &[u8], idx: Vec<usize>, depth: usize) -> Self {
        let mut counts = [0usize; 2];
        for &i in &idx {
            counts[usize::from(labels[i])] += 1;
        }
        if depth == 0 || counts[0] == 0 || counts[1] == 0 {
            return Self::Leaf(majority(counts));
        }
        let n = idx.len() as f64;
        let parent = gini(counts);
        let mut best: Option<(f64, usize, f64)> = None;
        let dim = inputs[idx[0]].len();
        let mut order = idx.clone();
        for f in 0..dim {
            order.sort_by(|&a, &b| inputs[a][f].total_cmp(&inputs[b][f]));
            let mut left = [0usize; 2];
            for k in 0..order.len() - 1 {
                left[usize::from(labels[order[k]])] += 1;
                let (x0, x1) = (inputs[order[k]][f], inputs[order[k + 1]][f]);
                if x0 == x1 {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let nl = (k + 1) as f64;
                let impurity = (nl * gini(left) + (n - nl) * gini(right)) / n;
                if impurity < parent - 1e-12 && best.is_none_or(|(b, _, _)| impurity < b - 1e-15) {
                    best = Some((impurity, f, 0.5 * (x0 + x1)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { return Self::Leaf(majority(counts)) };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| inputs[i][feature] <= threshold);
        Self::Split {
            feature,
            threshold,
            left: Box::new(Self::grow(inputs, labels, l, depth - 1)),
            right: Box::new(Self::grow(inputs, labels, r, depth - 1)),
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        match self {
            Self::Leaf(y) => *y,
            Self::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf(_) => 0,
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarningEstimate {
    /// Fraction of validation inputs where the surrogate matches the target.
    pub agreement: f64,
    /// The log contained one response class only.
    pub single_class: bool,
}

/// Fits a depth-6 surrogate on the logged queries and their revealed labels
/// and measures its agreement with `target` on `validation`.
pub fn warning_baseline<M: Classifier + ?Sized>(
    log: &QueryLog,
    target: &M,
    validation: &Dataset,
) -> Result<WarningEstimate> {
    if log.len() < MIN_LOG {
        return Err(Error::InsufficientSamples { needed: MIN_LOG, got: log.len() });
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let inputs: Vec<Vec<f64>> = log.rows.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
    let labels: Vec<u8> = (0..log.len()).map(|i| log.class_of(i)).collect();
    let single_class = labels.iter().all(|&y| y == labels[0]);
    let tree = DecisionTree::fit(&inputs, &labels, WARNING_MAX_DEPTH)?;
    let mut agree = 0usize;
    for x in &validation.features {
        if tree.predict(x) == target.predict_label(x)? {
            agree += 1;
        }
    }
    Ok(WarningEstimate { agreement: agree as f64 / validation.len() as f64, single_class })
}
