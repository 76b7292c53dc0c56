//! Accuracy and label-disagreement metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::rng::seeded;

pub const MIN_UNIF_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub r_test: f64,
    pub one_minus_r_test: f64,
    pub r_unif: Option<f64>,
    pub n_eval: usize,
}

/// Fraction of tuples whose predicted label (threshold 0.5, ties to 1)
/// matches the true label.
pub fn accuracy<M: Classifier + ?Sized>(model: &M, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let mut hits = 0usize;
    for (x, &y) in d.features.iter().zip(&d.labels) {
        if model.predict_label(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / d.len() as f64)
}

fn disagreement<A, B>(original: &A, extracted: &B, inputs: &[Vec<f64>]) -> Result<f64>
where
    A: Classifier + ?Sized,
    B: Classifier + ?Sized,
{
    if original.dim() != extracted.dim() {
        return Err(Error::DimensionMismatch { expected: original.dim(), got: extracted.dim() });
    }
    if inputs.is_empty() {
        return Err(Error::Empty("evaluation inputs".into()));
    }
    let mut diff = 0usize;
    for x in inputs {
        if original.predict_label(x)? != extracted.predict_label(x)? {
            diff += 1;
        }
    }
    Ok(diff as f64 / inputs.len() as f64)
}

/// Label-disagreement rate between two models on the test inputs.
pub fn r_test<A, B>(original: &A, extracted: &B, test: &Dataset) -> Result<f64>
where
    A: Classifier + ?Sized,
    B: Classifier + ?Sized,
{
    disagreement(original, extracted, &test.features)
}

/// Label-disagreement rate on uniform samples from `[-1, 1]^n`.
pub fn r_unif<A, B>(original: &A, extracted: &B, n_samples: usize, seed: u64) -> Result<f64>
where
    A: Classifier + ?Sized,
    B: Classifier + ?Sized,
{
    if n_samples < MIN_UNIF_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_UNIF_SAMPLES, got: n_samples });
    }
    let n = original.dim();
    let mut rng = seeded(seed);
    let inputs: Vec<Vec<f64>> =
        (0..n_samples).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    disagreement(original, extracted, &inputs)
}

/// All metrics for an extracted model against its original.
pub fn evaluate<A, B>(original: &A, extracted: &B, test: &Dataset, unif: Option<(usize, u64)>) -> Result<EvalResult>
where
    A: Classifier + ?Sized,
    B: Classifier + ?Sized,
{
    let r = r_test(original, extracted, test)?;
    Ok(EvalResult {
        accuracy: accuracy(extracted, test)?,
        r_test: r,
        one_minus_r_test: 1.0 - r,
        r_unif: unif.map(|(n, seed)| r_unif(original, extracted, n, seed)).transpose()?,
        n_eval: test.len(),
    })
}
