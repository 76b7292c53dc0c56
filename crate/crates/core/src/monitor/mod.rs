//! Defender-side estimate of how much training-set information a query
//! stream has extracted.
//!
//! Every answered query becomes a row `u = q ‖ z`. Its information gain is
//!
//! ```text
//! I_u = Σ_t max(pcc(u, D_t), 0) · I_D[t]  −  Σ_j max(pcc(u, Q_j), 0) · I_Q[j]
//! ```
//!
//! where `D_t` are training tuples (features ‖ label), `Q_j` earlier log rows
//! and `I_D`, `I_Q` their information amounts. Correlations are taken
//! row-wise over the `n + 1` entries of each vector.

pub mod entropy;
pub mod pcc;
pub mod warning;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::label_of;

pub use entropy::{joint_entropy, marginal_entropies, per_tuple_info, surprisal, InfoVector};
pub use pcc::{pcc, Correlation};
pub use warning::{warning_baseline, DecisionTree, WarningEstimate, WARNING_MAX_DEPTH};

/// Training-set side of the monitor, shared by every endpoint serving the
/// same model.
#[derive(Debug, Clone)]
pub struct TrainingInfo {
    width: usize,
    /// Centered, unit-norm tuples laid out row-major; constant tuples are
    /// all zeros so they never correlate.
    normalized: Vec<f64>,
    pub info: InfoVector,
    pub labels: Vec<u8>,
    pub class_info: [f64; 2],
    pub class_probs: [f64; 2],
}

impl TrainingInfo {
    pub fn from_dataset(d: &Dataset) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::Empty("training dataset".into()));
        }
        let info = per_tuple_info(&d.discretize())?;
        let width = d.dim() + 1;
        let mut normalized = Vec::with_capacity(width * d.len());
        for i in 0..d.len() {
            normalized.extend(pcc::normalized(&d.tuple(i)).unwrap_or_else(|| vec![0.0; width]));
        }
        let mut class_info = [0.0; 2];
        for (&y, &v) in d.labels.iter().zip(&info.per_tuple) {
            class_info[usize::from(y)] += v;
        }
        Ok(Self { width, normalized, info, labels: d.labels.clone(), class_info, class_probs: d.class_probs })
    }

    /// Length of a monitored row: feature count plus one response entry.
    pub fn width(&self) -> usize {
        self.width
    }

    /// `I_D` in bits.
    pub fn total_info(&self) -> f64 {
        self.info.total
    }

    /// First term of the information gain: positive correlations with every
    /// training tuple, weighted by the tuples' information.
    fn dataset_term(&self, nu: &[f64]) -> f64 {
        self.normalized
            .chunks_exact(self.width)
            .zip(&self.info.per_tuple)
            .map(|(t, &w)| pcc::dot(nu, t).max(0.0) * w)
            .sum()
    }
}

/// Append-only record of answered queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub rows: Vec<Vec<f64>>,
    /// Information credited to each row (already floored at 0).
    pub info: Vec<f64>,
}

impl QueryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Response label of row `i` (its last entry, thresholded at 0.5).
    pub fn class_of(&self, i: usize) -> u8 {
        label_of(*self.rows[i].last().expect("rows are nonempty"))
    }
}

/// Extraction status of a query log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStatus {
    /// Leaked fraction of each class's information (may exceed 1).
    pub per_class: [f64; 2],
    /// `Σ_k p_k · per_class[k]` clipped to `[0, 1]`.
    pub overall: f64,
    pub clipped: bool,
    /// Classes whose training information is zero; they contribute 0.
    pub empty_class: [bool; 2],
}

impl ExtractionStatus {
    fn from_leaked(leaked: [f64; 2], training: &TrainingInfo) -> Self {
        let mut per_class = [0.0; 2];
        let mut empty_class = [false; 2];
        for k in 0..2 {
            if training.class_info[k] > 0.0 {
                per_class[k] = leaked[k] / training.class_info[k];
            } else {
                empty_class[k] = true;
            }
        }
        let raw: f64 = (0..2).map(|k| training.class_probs[k] * per_class[k]).sum();
        let overall = raw.clamp(0.0, 1.0);
        Self { per_class, overall, clipped: overall != raw, empty_class }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Signed `I_u` from the information-gain formula.
    pub info: f64,
    /// `max(I_u, 0)`, the amount added to the leakage.
    pub credited: f64,
    /// Leakage after this observation.
    pub leakage: f64,
}

/// Monitor state that survives a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorCheckpoint {
    pub rows: Vec<Vec<f64>>,
    pub info: Vec<f64>,
    pub leakage: f64,
}

/// Streaming monitor for one protected model.
#[derive(Debug, Clone)]
pub struct Monitor {
    training: Arc<TrainingInfo>,
    log: QueryLog,
    /// Normalized copies of the log rows that carry information; rows with
    /// zero credit cannot affect the subtraction term.
    informative: Vec<(Vec<f64>, f64)>,
    leakage: f64,
}

impl Monitor {
    pub fn new(training: Arc<TrainingInfo>) -> Self {
        Self { training, log: QueryLog::default(), informative: Vec::new(), leakage: 0.0 }
    }

    pub fn training(&self) -> &TrainingInfo {
        &self.training
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }

    /// Accumulated leakage `L = Σ max(I_u, 0)`.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    fn check_width(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.training.width {
            return Err(Error::DimensionMismatch { expected: self.training.width, got: u.len() });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("monitored rows must be finite".into()));
        }
        Ok(())
    }

    /// Information gain of `u` against the training set and the current log,
    /// without recording it.
    pub fn query_info(&self, u: &[f64]) -> Result<f64> {
        self.check_width(u)?;
        let Some(nu) = pcc::normalized(u) else { return Ok(0.0) };
        let gained = self.training.dataset_term(&nu);
        let redundant: f64 = self.informative.iter().map(|(r, w)| pcc::dot(&nu, r).max(0.0) * w).sum();
        Ok(gained - redundant)
    }

    /// Scores `u`, appends it to the log and updates the leakage.
    pub fn observe(&mut self, u: &[f64]) -> Result<Observation> {
        let info = self.query_info(u)?;
        let credited = info.max(0.0);
        self.push(u.to_vec(), credited);
        Ok(Observation { info, credited, leakage: self.leakage })
    }

    fn push(&mut self, row: Vec<f64>, credited: f64) {
        if credited > 0.0 {
            if let Some(n) = pcc::normalized(&row) {
                self.informative.push((n, credited));
            }
        }
        self.leakage += credited;
        self.log.rows.push(row);
        self.log.info.push(credited);
    }

    /// Incremental extraction status: credited information per response class
    /// over the training information of that class.
    pub fn status(&self) -> ExtractionStatus {
        extraction_status(&self.log, &self.training)
    }

    /// Order-independent status. Each row's dataset term is shared among
    /// all rows it correlates with (itself included), so the result does
    /// not depend on arrival order.
    pub fn batch_status(&self) -> ExtractionStatus {
        batch_extraction_status(&self.log.rows, &self.training)
    }

    pub fn checkpoint(&self) -> MonitorCheckpoint {
        MonitorCheckpoint { rows: self.log.rows.clone(), info: self.log.info.clone(), leakage: self.leakage }
    }

    pub fn restore(training: Arc<TrainingInfo>, cp: MonitorCheckpoint) -> Result<Self> {
        if cp.rows.len() != cp.info.len() {
            return Err(Error::DimensionMismatch { expected: cp.rows.len(), got: cp.info.len() });
        }
        let mut m = Self::new(training);
        for (row, info) in cp.rows.into_iter().zip(cp.info) {
            m.check_width(&row)?;
            if info < 0.0 {
                return Err(Error::InvalidConfig("checkpoint info must be nonnegative".into()));
            }
            m.push(row, info);
        }
        m.leakage = cp.leakage;
        Ok(m)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.checkpoint())?)?;
        Ok(())
    }

    pub fn load_checkpoint(training: Arc<TrainingInfo>, path: impl AsRef<Path>) -> Result<Self> {
        Self::restore(training, serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Extraction status of a log whose rows already carry their credited information.
pub fn extraction_status(log: &QueryLog, training: &TrainingInfo) -> ExtractionStatus {
    let mut leaked = [0.0; 2];
    for (i, &v) in log.info.iter().enumerate() {
        leaked[usize::from(log.class_of(i))] += v;
    }
    ExtractionStatus::from_leaked(leaked, training)
}

/// Permutation-invariant extraction status computed against the final log.
pub fn batch_extraction_status(rows: &[Vec<f64>], training: &TrainingInfo) -> ExtractionStatus {
    let normalized: Vec<Option<Vec<f64>>> = rows.iter().map(|r| pcc::normalized(r)).collect();
    let mut leaked = [0.0; 2];
    for (row, nu) in rows.iter().zip(&normalized) {
        let Some(nu) = nu else { continue };
        let share: f64 = normalized.iter().flatten().map(|nv| pcc::dot(nu, nv).max(0.0)).sum();
        let credit = training.dataset_term(nu) / share;
        leaked[usize::from(label_of(*row.last().expect("nonempty row")))] += credit;
    }
    ExtractionStatus::from_leaked(leaked, training)
}
