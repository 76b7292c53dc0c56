//! Response perturbation mechanisms.
//!
//! All mechanisms are pure functions of their inputs and a caller-owned
//! random stream. Perturbed probabilities are returned unclamped; call
//! [`PerturbedResponse::clamped`] for the presentation variant.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::label_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Laplace,
    Gaussian,
    Bdpl,
    Rounding,
    None,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Laplace => "laplace",
            MechanismKind::Gaussian => "gaussian",
            MechanismKind::Bdpl => "bdpl",
            MechanismKind::Rounding => "rounding",
            MechanismKind::None => "none",
        }
    }
}

/// What a deployed endpoint reveals per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    /// The class-1 confidence score.
    #[default]
    Probability,
    /// Only the predicted label.
    Label,
}

fn default_sensitivity() -> f64 {
    1.0
}

fn default_delta_zone() -> f64 {
    0.125
}

fn default_decimals() -> u32 {
    2
}

/// Mechanism configuration, e.g. `{"kind":"bdpl","epsilon":1.0,"delta_zone":0.125}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: MechanismKind,
    #[serde(default)]
    pub epsilon: f64,
    /// Range of a probability response.
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    /// Half-width of the boundary-sensitive zone around confidence 0.5.
    #[serde(default = "default_delta_zone")]
    pub delta_zone: f64,
    #[serde(default = "default_decimals")]
    pub decimals: u32,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::new(MechanismKind::None, 0.0)
    }

    pub fn new(kind: MechanismKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            sensitivity: default_sensitivity(),
            delta_zone: default_delta_zone(),
            decimals: default_decimals(),
        }
    }

    pub fn laplace(epsilon: f64) -> Self {
        Self::new(MechanismKind::Laplace, epsilon)
    }

    pub fn gaussian(epsilon: f64) -> Self {
        Self::new(MechanismKind::Gaussian, epsilon)
    }

    pub fn bdpl(epsilon: f64, delta_zone: f64) -> Self {
        Self { delta_zone, ..Self::new(MechanismKind::Bdpl, epsilon) }
    }

    pub fn rounding(decimals: u32) -> Self {
        Self { decimals, ..Self::new(MechanismKind::Rounding, 0.0) }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MechanismKind::Laplace | MechanismKind::Gaussian | MechanismKind::Bdpl => {
                check_epsilon(self.epsilon)?;
            }
            MechanismKind::Rounding | MechanismKind::None => {}
        }
        if matches!(self.kind, MechanismKind::Laplace | MechanismKind::Gaussian)
            && !(self.sensitivity > 0.0 && self.sensitivity.is_finite())
        {
            return Err(Error::InvalidConfig("sensitivity must be positive".into()));
        }
        if self.kind == MechanismKind::Bdpl && !(self.delta_zone > 0.0 && self.delta_zone <= 0.5) {
            return Err(Error::InvalidConfig("delta_zone must lie in (0, 0.5]".into()));
        }
        Ok(())
    }

    /// True when a response with confidence `prob` falls inside the
    /// boundary-sensitive zone `|prob - 0.5| < Δ`.
    pub fn in_zone(&self, prob: f64) -> bool {
        (prob - 0.5).abs() < self.delta_zone
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && !epsilon.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedResponse {
    pub value: f64,
    pub mechanism: MechanismKind,
    pub epsilon_spent: f64,
}

impl PerturbedResponse {
    fn exact(value: f64, mechanism: MechanismKind) -> Self {
        Self { value, mechanism, epsilon_spent: 0.0 }
    }

    /// The response clamped to `[0, 1]`.
    pub fn clamped(self) -> Self {
        Self { value: self.value.clamp(0.0, 1.0), ..self }
    }
}

/// Draws from Laplace(0, scale) by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // u uniform on (-1/2, 1/2); 1 - 2|u| stays in (0, 1].
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `y + Laplace(0, sensitivity/ε)`.
pub fn laplace_perturb<R: Rng + ?Sized>(y: f64, spec: &NoiseSpec, rng: &mut R) -> Result<PerturbedResponse> {
    check_epsilon(spec.epsilon)?;
    let scale = spec.sensitivity / spec.epsilon;
    Ok(PerturbedResponse {
        value: y + sample_laplace(scale, rng),
        mechanism: MechanismKind::Laplace,
        epsilon_spent: spec.epsilon,
    })
}

/// `y + N(0, σ²)` with `σ = sensitivity/ε`. This is a simulation knob, not
/// a calibrated (ε, δ) guarantee.
pub fn gaussian_perturb<R: Rng + ?Sized>(y: f64, spec: &NoiseSpec, rng: &mut R) -> Result<PerturbedResponse> {
    check_epsilon(spec.epsilon)?;
    let sigma = spec.sensitivity / spec.epsilon;
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("gaussian scale {sigma}: {e}")))?;
    Ok(PerturbedResponse {
        value: y + normal.sample(rng),
        mechanism: MechanismKind::Gaussian,
        epsilon_spent: spec.epsilon,
    })
}

/// Probability that boundary randomized response keeps the true answer:
/// `1/2 + sqrt(e^{2ε} - 1) / (2 + 2e^ε)`.
pub fn bdpl_keep_probability(epsilon: f64) -> f64 {
    // Same ratio with numerator and denominator scaled by e^-ε, which keeps
    // large ε from overflowing.
    let t = (-epsilon).exp();
    0.5 + (1.0 - t * t).sqrt() / (2.0 * (1.0 + t))
}

fn bdpl_flip<R: Rng + ?Sized>(prob: f64, spec: &NoiseSpec, rng: &mut R) -> Result<Option<bool>> {
    check_epsilon(spec.epsilon)?;
    if !spec.in_zone(prob) {
        return Ok(None);
    }
    let keep = bdpl_keep_probability(spec.epsilon);
    Ok(Some(rng.random::<f64>() >= keep))
}

/// Boundary randomized response on a label: outside the zone `y` is returned
/// as-is at no cost; inside, `y` is flipped with probability `1 - keep(ε)`.
pub fn bdpl_perturb<R: Rng + ?Sized>(y: u8, prob: f64, spec: &NoiseSpec, rng: &mut R) -> Result<PerturbedResponse> {
    if y > 1 {
        return Err(Error::InvalidConfig(format!("bdpl expects a binary label, got {y}")));
    }
    Ok(match bdpl_flip(prob, spec, rng)? {
        None => PerturbedResponse::exact(f64::from(y), MechanismKind::Bdpl),
        Some(flip) => PerturbedResponse {
            value: f64::from(if flip { 1 - y } else { y }),
            mechanism: MechanismKind::Bdpl,
            epsilon_spent: spec.epsilon,
        },
    })
}

/// Confidence-valued variant of [`bdpl_perturb`]: a flip reports `1 - prob`,
/// which moves the answer to the other side of the decision boundary.
pub fn bdpl_perturb_confidence<R: Rng + ?Sized>(prob: f64, spec: &NoiseSpec, rng: &mut R) -> Result<PerturbedResponse> {
    Ok(match bdpl_flip(prob, spec, rng)? {
        None => PerturbedResponse::exact(prob, MechanismKind::Bdpl),
        Some(flip) => PerturbedResponse {
            value: if flip { 1.0 - prob } else { prob },
            mechanism: MechanismKind::Bdpl,
            epsilon_spent: spec.epsilon,
        },
    })
}

/// Half-away-from-zero rounding to `decimals` places.
pub fn round_confidence(y: f64, decimals: u32) -> PerturbedResponse {
    let factor = 10f64.powi(decimals as i32);
    let scaled = y * factor;
    // Decimal ties such as 1.005 are not representable; treat anything within
    // 1e-9 of a half as a tie.
    let rounded = if (scaled.abs().fract() - 0.5).abs() < 1e-9 {
        scaled.signum() * (scaled.abs().trunc() + 1.0)
    } else {
        scaled.round()
    };
    PerturbedResponse::exact(rounded / factor, MechanismKind::Rounding)
}

/// Applies `spec` to a model confidence `prob`, returning either a perturbed
/// confidence or a perturbed label depending on `mode`.
pub fn perturb<R: Rng + ?Sized>(prob: f64, spec: &NoiseSpec, mode: ResponseMode, rng: &mut R) -> Result<PerturbedResponse> {
    let label = label_of(prob);
    match (spec.kind, mode) {
        (MechanismKind::None, ResponseMode::Probability) => Ok(PerturbedResponse::exact(prob, MechanismKind::None)),
        (MechanismKind::None, ResponseMode::Label) => Ok(PerturbedResponse::exact(f64::from(label), MechanismKind::None)),
        (MechanismKind::Rounding, ResponseMode::Probability) => Ok(round_confidence(prob, spec.decimals)),
        (MechanismKind::Rounding, ResponseMode::Label) => {
            Ok(PerturbedResponse::exact(f64::from(label), MechanismKind::Rounding))
        }
        (MechanismKind::Laplace, ResponseMode::Probability) => laplace_perturb(prob, spec, rng),
        (MechanismKind::Gaussian, ResponseMode::Probability) => gaussian_perturb(prob, spec, rng),
        (MechanismKind::Laplace | MechanismKind::Gaussian, ResponseMode::Label) => Err(Error::InvalidConfig(
            "additive noise mechanisms require probability responses".into(),
        )),
        (MechanismKind::Bdpl, ResponseMode::Probability) => bdpl_perturb_confidence(prob, spec, rng),
        (MechanismKind::Bdpl, ResponseMode::Label) => bdpl_perturb(label, prob, spec, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn laplace_rejects_nonpositive_epsilon() {
        let mut rng = seeded(0);
        assert!(laplace_perturb(0.5, &NoiseSpec::laplace(0.0), &mut rng).is_err());
        assert!(gaussian_perturb(0.5, &NoiseSpec::gaussian(-1.0), &mut rng).is_err());
        assert!(bdpl_perturb(1, 0.5, &NoiseSpec::bdpl(0.0, 0.125), &mut rng).is_err());
    }

    #[test]
    fn huge_epsilon_leaves_value_nearly_unchanged() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            let r = laplace_perturb(0.3, &NoiseSpec::laplace(1e12), &mut rng).unwrap();
            assert!((r.value - 0.3).abs() < 1e-9);
            let g = gaussian_perturb(0.3, &NoiseSpec::gaussian(1e12), &mut rng).unwrap();
            assert!((g.value - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn laplace_mean_and_mean_absolute_deviation() {
        let mut rng = seeded(2);
        let spec = NoiseSpec::laplace(1.0);
        let draws: Vec<f64> = (0..100_000).map(|_| laplace_perturb(0.5, &spec, &mut rng).unwrap().value).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        // E|Laplace(0,b)| = b
        let mad = draws.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / draws.len() as f64;
        assert!((mad - 1.0).abs() < 0.03, "mad {mad}");
    }

    #[test]
    fn gaussian_variance() {
        let mut rng = seeded(3);
        let spec = NoiseSpec::gaussian(2.0);
        let draws: Vec<f64> = (0..100_000).map(|_| gaussian_perturb(0.0, &spec, &mut rng).unwrap().value).collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64;
        assert!((var - 0.25).abs() < 0.03 * 0.25, "var {var}");
    }

    #[test]
    fn keep_probability_values() {
        // ε → 0⁺ tends to a fair coin.
        assert!((bdpl_keep_probability(1e-12) - 0.5).abs() < 1e-5);
        // 1/2 + sqrt(e² - 1)/(2 + 2e) = 0.83994..
        let e = std::f64::consts::E;
        let expected = 0.5 + (e * e - 1.0).sqrt() / (2.0 + 2.0 * e);
        assert!((bdpl_keep_probability(1.0) - expected).abs() < 1e-15);
        assert!((bdpl_keep_probability(1.0) - 0.8399).abs() < 1e-4);
        assert!(bdpl_keep_probability(1000.0) <= 1.0);
        assert_eq!(round_confidence(1.005, 2).value, 1.01);
    }

    #[test]
    fn keep_probability_is_monotone() {
        let mut prev = 0.5;
        for i in 1..=50 {
            let k = bdpl_keep_probability(i as f64 * 0.1);
            assert!(k > prev && (0.5..1.0).contains(&k));
            prev = k;
        }
    }

    #[test]
    fn bdpl_empirical_keep_rate() {
        let mut rng = seeded(4);
        let spec = NoiseSpec::bdpl(1.0, 0.125);
        let trials = 100_000;
        let kept = (0..trials)
            .filter(|_| bdpl_perturb(1, 0.55, &spec, &mut rng).unwrap().value == 1.0)
            .count();
        let rate = kept as f64 / trials as f64;
        assert!((rate - bdpl_keep_probability(1.0)).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn bdpl_outside_zone_is_exact_and_free() {
        let mut rng = seeded(5);
        let spec = NoiseSpec::bdpl(1.0, 0.125);
        for _ in 0..1000 {
            let r = bdpl_perturb(1, 0.9, &spec, &mut rng).unwrap();
            assert_eq!((r.value, r.epsilon_spent), (1.0, 0.0));
        }
        let r = bdpl_perturb(0, 0.45, &spec, &mut rng).unwrap();
        assert_eq!(r.epsilon_spent, 1.0);
    }

    #[test]
    fn whole_zone_charges_every_query() {
        let spec = NoiseSpec::bdpl(1.0, 0.5);
        assert!(spec.in_zone(0.0001) && spec.in_zone(0.9999));
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(round_confidence(0.8367, 2).value, 0.84);
        assert_eq!(round_confidence(0.5, 0).value, 1.0);
        assert_eq!(round_confidence(0.5, 1).value, 0.5);
        assert_eq!(round_confidence(0.5, 3).value, 0.5);
        assert_eq!(round_confidence(0.005, 2).value, 0.01);
        assert_eq!(round_confidence(-0.005, 2).value, -0.01);
        assert_eq!(round_confidence(0.125, 2).value, 0.13);
        assert_eq!(round_confidence(0.1234, 3).value, 0.123);
        assert_eq!(round_confidence(0.8367, 2).epsilon_spent, 0.0);
    }

    #[test]
    fn shift_equivariance_with_matched_seeds() {
        for spec in [NoiseSpec::laplace(0.7), NoiseSpec::gaussian(0.7)] {
            for seed in 0..50 {
                let a = perturb(0.2, &spec, ResponseMode::Probability, &mut seeded(seed)).unwrap();
                let b = perturb(0.2 + 3.5, &spec, ResponseMode::Probability, &mut seeded(seed)).unwrap();
                assert!(((b.value - a.value) - 3.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn epsilon_spent_accounting() {
        let mut rng = seeded(6);
        let r = perturb(0.3, &NoiseSpec::laplace(0.4), ResponseMode::Probability, &mut rng).unwrap();
        assert_eq!(r.epsilon_spent, 0.4);
        let r = perturb(0.3, &NoiseSpec::rounding(2), ResponseMode::Probability, &mut rng).unwrap();
        assert_eq!(r.epsilon_spent, 0.0);
        let r = perturb(0.3, &NoiseSpec::none(), ResponseMode::Label, &mut rng).unwrap();
        assert_eq!((r.value, r.epsilon_spent), (0.0, 0.0));
    }

    #[test]
    fn clamping_is_presentation_only() {
        let r = PerturbedResponse { value: 1.7, mechanism: MechanismKind::Laplace, epsilon_spent: 1.0 };
        assert_eq!(r.clamped().value, 1.0);
        assert_eq!(r.value, 1.7);
    }

    #[test]
    fn spec_json_defaults() {
        let s: NoiseSpec = serde_json::from_str(r#"{"kind":"bdpl","epsilon":1.0,"delta_zone":0.125}"#).unwrap();
        assert_eq!(s, NoiseSpec::bdpl(1.0, 0.125));
        assert!(s.validate().is_ok());
        let bad: NoiseSpec = serde_json::from_str(r#"{"kind":"bdpl","epsilon":1.0,"delta_zone":0.9}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
