//! Adaptive budget allocation and the monitored DP endpoint.
//!
//! The accountant hands out a per-query budget from a parabolic schedule
//! `ε_i = √(p (L_t − L_i))` with `p = 9 ε_re² / (4 L_t³)`, so that the
//! integral of the schedule over `[0, L_t]` equals the remaining budget.
//! [`DefendedEndpoint`] couples it with a [`Monitor`]: each answer is
//! perturbed with the allocated budget and its information gain feeds back
//! into the leakage `L`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::QueryEndpoint;
use crate::error::{Error, Result};
use crate::mechanisms::{perturb, MechanismKind, NoiseSpec, ResponseMode};
use crate::models::{label_of, Classifier, TargetModel};
use crate::monitor::{Monitor, TrainingInfo};
use crate::rng::{seeded, LabRng};

/// `p = 9 ε² / (4 L_t³)`.
pub fn apba_scale(epsilon_remaining: f64, threshold: f64) -> f64 {
    9.0 * epsilon_remaining * epsilon_remaining / (4.0 * threshold.powi(3))
}

/// Budget for the next query given the remaining budget, the leakage so far
/// and the threshold. `scale` overrides the recomputed `p`. Returns 0 once
/// the leakage reaches the threshold or the budget is gone, and never more
/// than the remaining budget.
pub fn apba_allocate(epsilon_remaining: f64, leakage: f64, threshold: f64, scale: Option<f64>) -> f64 {
    if !(epsilon_remaining > 0.0) || leakage >= threshold {
        return 0.0;
    }
    let p = scale.unwrap_or_else(|| apba_scale(epsilon_remaining, threshold));
    (p * (threshold - leakage)).sqrt().min(epsilon_remaining)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    /// Perturbed with a positive budget.
    Charged,
    /// Answered exactly outside the boundary zone at no cost.
    Free,
    /// Uninformative answer after the budget or leakage limit was reached.
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub i: usize,
    pub epsilon_i: f64,
    #[serde(rename = "L_i")]
    pub leakage: f64,
    pub status: ResponseStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccountant {
    epsilon_total: f64,
    /// Neumaier-compensated running sum of committed budgets.
    spent: f64,
    compensation: f64,
    leakage: f64,
    threshold: f64,
    fixed_scale: Option<f64>,
    history: Vec<AllocationRecord>,
}

impl PrivacyAccountant {
    pub fn new(epsilon: f64, threshold: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!("leakage threshold must be positive, got {threshold}")));
        }
        Ok(Self {
            epsilon_total: epsilon,
            spent: 0.0,
            compensation: 0.0,
            leakage: 0.0,
            threshold,
            fixed_scale: None,
            history: Vec::new(),
        })
    }

    /// Freezes `p` at its initial value instead of recomputing it from the
    /// remaining budget on every query.
    pub fn with_fixed_scale(mut self) -> Self {
        self.fixed_scale = Some(apba_scale(self.epsilon_total, self.threshold));
        self
    }

    pub fn epsilon_total(&self) -> f64 {
        self.epsilon_total
    }

    pub fn spent(&self) -> f64 {
        self.spent + self.compensation
    }

    pub fn epsilon_remaining(&self) -> f64 {
        (self.epsilon_total - self.spent()).max(0.0)
    }

    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The `p` the next allocation will use.
    pub fn scale(&self) -> f64 {
        self.fixed_scale.unwrap_or_else(|| apba_scale(self.epsilon_remaining(), self.threshold))
    }

    pub fn history(&self) -> &[AllocationRecord] {
        &self.history
    }

    pub fn exhausted(&self) -> bool {
        self.epsilon_remaining() <= 0.0 || self.leakage >= self.threshold
    }

    /// Next per-query budget; does not change any state.
    pub fn allocate(&self) -> f64 {
        apba_allocate(self.epsilon_remaining(), self.leakage, self.threshold, self.fixed_scale)
    }

    /// Debits `epsilon_i` and records the decision at the current leakage.
    pub fn commit(&mut self, epsilon_i: f64, status: ResponseStatus) -> Result<()> {
        let remaining = self.epsilon_remaining();
        if epsilon_i < 0.0 || epsilon_i > remaining {
            return Err(Error::InvalidConfig(format!("cannot charge {epsilon_i} with {remaining} remaining")));
        }
        if epsilon_i == remaining && epsilon_i > 0.0 {
            // Spending exactly what is left must leave exactly zero.
            self.spent = self.epsilon_total;
            self.compensation = 0.0;
        } else {
            let t = self.spent + epsilon_i;
            if self.spent.abs() >= epsilon_i.abs() {
                self.compensation += (self.spent - t) + epsilon_i;
            } else {
                self.compensation += (epsilon_i - t) + self.spent;
            }
            self.spent = t;
        }
        self.history.push(AllocationRecord { i: self.history.len() + 1, epsilon_i, leakage: self.leakage, status });
        Ok(())
    }

    /// Adds `max(info, 0)` to the accumulated leakage.
    pub fn add_leakage(&mut self, info: f64) {
        self.leakage += info.max(0.0);
    }

    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for rec in &self.history {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_history_csv(std::fs::File::create(path)?)
    }
}

fn default_alpha() -> f64 {
    1.0
}

fn default_delta_zone() -> f64 {
    0.125
}

/// JSON configuration of a monitored endpoint, e.g.
/// `{"mechanism":"bdpl","epsilon":1.0,"alpha":1.0,"delta_zone":0.125}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    /// Leakage threshold as a fraction of the training information.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta_zone")]
    pub delta_zone: f64,
    #[serde(default)]
    pub fixed_p: bool,
    #[serde(default)]
    pub mode: ResponseMode,
    #[serde(default)]
    pub clamp: bool,
}

impl EndpointConfig {
    pub fn new(mechanism: MechanismKind, epsilon: f64, alpha: f64) -> Self {
        Self {
            mechanism,
            epsilon,
            alpha,
            delta_zone: default_delta_zone(),
            fixed_p: false,
            mode: ResponseMode::default(),
            clamp: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.mechanism, MechanismKind::Laplace | MechanismKind::Gaussian | MechanismKind::Bdpl) {
            return Err(Error::InvalidConfig(format!(
                "monitored endpoints support laplace, gaussian or bdpl, not {}",
                self.mechanism.name()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.delta_zone > 0.0 && self.delta_zone <= 0.5) {
            return Err(Error::InvalidConfig(format!("delta_zone must lie in (0, 0.5], got {}", self.delta_zone)));
        }
        if self.mode == ResponseMode::Label && self.mechanism != MechanismKind::Bdpl {
            return Err(Error::InvalidConfig("label responses require the bdpl mechanism".into()));
        }
        NoiseSpec::new(self.mechanism, self.epsilon).validate()
    }
}

/// One answer from a [`DefendedEndpoint`] with its accounting metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefendedResponse {
    pub value: f64,
    pub epsilon_i: f64,
    /// Leakage after this query.
    pub leakage: f64,
    pub status: ResponseStatus,
}

impl DefendedResponse {
    pub fn refused(&self) -> bool {
        self.status == ResponseStatus::Refused
    }
}

/// A target model answering through the monitored, adaptively budgeted
/// mechanism.
#[derive(Debug, Clone)]
pub struct DefendedEndpoint {
    model: TargetModel,
    config: EndpointConfig,
    accountant: PrivacyAccountant,
    monitor: Monitor,
    rng: LabRng,
    refused: bool,
}

impl DefendedEndpoint {
    /// Endpoint with `L_t = alpha · I_D`.
    pub fn new(model: TargetModel, training: Arc<TrainingInfo>, config: EndpointConfig, seed: u64) -> Result<Self> {
        let threshold = config.alpha * training.total_info();
        Self::with_threshold(model, training, config, threshold, seed)
    }

    /// Endpoint with an explicit leakage threshold `L_t`.
    pub fn with_threshold(
        model: TargetModel,
        training: Arc<TrainingInfo>,
        config: EndpointConfig,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if training.width() != model.dim() + 1 {
            return Err(Error::DimensionMismatch { expected: model.dim() + 1, got: training.width() });
        }
        let mut accountant = PrivacyAccountant::new(config.epsilon, threshold)?;
        if config.fixed_p {
            accountant = accountant.with_fixed_scale();
        }
        Ok(Self { model, config, accountant, monitor: Monitor::new(training), rng: seeded(seed), refused: false })
    }

    pub fn accountant(&self) -> &PrivacyAccountant {
        &self.accountant
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn is_refusing(&self) -> bool {
        self.refused
    }

    fn uninformative(&mut self) -> f64 {
        match self.config.mode {
            ResponseMode::Probability => 0.5,
            ResponseMode::Label => f64::from(u8::from(self.rng.random::<bool>())),
        }
    }

    fn refuse(&mut self) -> DefendedResponse {
        self.refused = true;
        let value = self.uninformative();
        DefendedResponse { value, epsilon_i: 0.0, leakage: self.accountant.leakage(), status: ResponseStatus::Refused }
    }

    /// One step of the monitored loop: true answer, budget allocation,
    /// perturbation, information update, debit.
    pub fn mdp_respond(&mut self, q: &[f64]) -> Result<DefendedResponse> {
        let prob = self.model.predict_prob(q)?;
        if self.refused {
            return Ok(self.refuse());
        }
        let free = self.config.mechanism == MechanismKind::Bdpl && (prob - 0.5).abs() >= self.config.delta_zone;
        let (value, epsilon_i, status) = if free {
            let exact = match self.config.mode {
                ResponseMode::Probability => prob,
                ResponseMode::Label => f64::from(label_of(prob)),
            };
            (exact, 0.0, ResponseStatus::Free)
        } else {
            let epsilon_i = self.accountant.allocate();
            if !(epsilon_i > 0.0) {
                self.accountant.commit(0.0, ResponseStatus::Refused)?;
                return Ok(self.refuse());
            }
            let spec = NoiseSpec {
                delta_zone: self.config.delta_zone,
                ..NoiseSpec::new(self.config.mechanism, epsilon_i)
            };
            let z = perturb(prob, &spec, self.config.mode, &mut self.rng)?;
            (z.value, epsilon_i, ResponseStatus::Charged)
        };
        let value = if self.config.clamp { value.clamp(0.0, 1.0) } else { value };
        let mut u = q.to_vec();
        u.push(value);
        let obs = self.monitor.observe(&u)?;
        self.accountant.commit(epsilon_i, status)?;
        self.accountant.add_leakage(obs.info);
        if self.accountant.leakage() >= self.accountant.threshold() {
            self.refused = true;
        }
        Ok(DefendedResponse { value, epsilon_i, leakage: self.accountant.leakage(), status })
    }
}

impl QueryEndpoint for DefendedEndpoint {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn submit(&mut self, query: &[f64]) -> Result<f64> {
        self.mdp_respond(query).map(|r| r.value)
    }
}

/// Adaptive BDPL: label responses whose flip probability uses the budget
/// allocated per query instead of a fixed `ε`.
pub fn wrap_bdpl_with_mdp(
    target: TargetModel,
    training: Arc<TrainingInfo>,
    epsilon: f64,
    threshold: f64,
    delta_zone: f64,
    seed: u64,
) -> Result<DefendedEndpoint> {
    let config = EndpointConfig { delta_zone, mode: ResponseMode::Label, ..EndpointConfig::new(MechanismKind::Bdpl, epsilon, 1.0) };
    DefendedEndpoint::with_threshold(target, training, config, threshold, seed)
}

/// A target answering through a fixed mechanism (or none).
#[derive(Debug, Clone)]
pub struct StaticEndpoint {
    model: TargetModel,
    spec: NoiseSpec,
    mode: ResponseMode,
    clamp: bool,
    rng: LabRng,
    queries: usize,
    epsilon_spent: f64,
}

impl StaticEndpoint {
    pub fn new(model: TargetModel, spec: NoiseSpec, mode: ResponseMode, clamp: bool, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self { model, spec, mode, clamp, rng: seeded(seed), queries: 0, epsilon_spent: 0.0 })
    }

    pub fn unprotected(model: TargetModel) -> Self {
        Self::new(model, NoiseSpec::none(), ResponseMode::Probability, false, 0).expect("no-noise spec is valid")
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.epsilon_spent
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }
}

impl QueryEndpoint for StaticEndpoint {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn submit(&mut self, query: &[f64]) -> Result<f64> {
        let prob = self.model.predict_prob(query)?;
        let mut z = perturb(prob, &self.spec, self.mode, &mut self.rng)?;
        if self.clamp {
            z = z.clamped();
        }
        self.queries += 1;
        self.epsilon_spent += z.epsilon_spent;
        Ok(z.value)
    }
}
