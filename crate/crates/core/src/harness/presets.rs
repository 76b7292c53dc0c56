//! Named experiment presets.

use crate::error::{Error, Result};
use crate::mechanisms::ResponseMode;

use super::config::{
    AttackSpec, DatasetSource, DefenseSpec, ExperimentConfig, ExperimentKind, ModelKind, RValue, RunOptions,
};

pub const PRESET_NAMES: [&str; 8] = [
    "fig-parabola",
    "attack-noprotection",
    "mdp-vs-bdpl",
    "mdp-defense",
    "monitor-vs-warning",
    "utility-epsilon",
    "utility-alpha",
    "perturbation",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Sweep(Box<ExperimentConfig>),
    /// Allocation schedule on a leakage grid; no model involved.
    Parabola { threshold: f64, epsilon: f64, points: usize },
}

fn synthetic() -> DatasetSource {
    DatasetSource::Synthetic { n: 5, m: 2000, coef_scale: 4.0 }
}

fn sweep(id: &str, defenses: Vec<DefenseSpec>, attack: AttackSpec) -> ExperimentConfig {
    ExperimentConfig {
        id: id.into(),
        kind: ExperimentKind::Sweep,
        dataset: synthetic(),
        model: ModelKind::Logistic,
        defenses,
        attack,
        r_values: vec![RValue::Auto],
        epsilons: vec![1.0],
        alphas: vec![1.0],
        seeds: (0..10).collect(),
        options: RunOptions::default(),
    }
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let cfg = match name {
        "fig-parabola" => return Ok(Preset::Parabola { threshold: 10.0, epsilon: 20.0 / 3.0, points: 100 }),
        "attack-noprotection" => sweep(name, vec![DefenseSpec::None], AttackSpec::QpdLinear),
        "mdp-vs-bdpl" => {
            let mut c = sweep(name, vec![DefenseSpec::BdplFixed, DefenseSpec::MdpBdpl], AttackSpec::QpdLinear);
            c.epsilons = vec![0.5, 1.0, 2.0];
            c.options.r_cap = 1 << 12;
            c
        }
        "mdp-defense" => {
            let mut c = sweep(name, vec![DefenseSpec::MdpLaplace], AttackSpec::QpdLinear);
            c.options.r_cap = 1 << 12;
            c
        }
        "monitor-vs-warning" => {
            let mut c = sweep(name, vec![DefenseSpec::LaplaceFixed], AttackSpec::QpdLinear);
            c.kind = ExperimentKind::MonitorVsWarning;
            c.epsilons = vec![8.0];
            c.r_values = (0..=8).map(|k| RValue::Fixed(1 << k)).collect();
            c
        }
        "utility-epsilon" => {
            let mut c = sweep(name, vec![DefenseSpec::MdpBdpl], AttackSpec::Benign);
            c.epsilons = vec![0.25, 0.5, 1.0, 2.0, 4.0];
            c.options.response_mode = ResponseMode::Label;
            c
        }
        "utility-alpha" => {
            let mut c = sweep(name, vec![DefenseSpec::MdpBdpl], AttackSpec::Benign);
            c.alphas = vec![0.25, 0.5, 1.0];
            c.options.response_mode = ResponseMode::Label;
            c
        }
        "perturbation" => {
            let mut c = sweep(
                name,
                vec![
                    DefenseSpec::None,
                    DefenseSpec::Rounding,
                    DefenseSpec::LaplaceFixed,
                    DefenseSpec::GaussianFixed,
                    DefenseSpec::BdplFixed,
                ],
                AttackSpec::QpdLinear,
            );
            c.options.r_cap = 1 << 14;
            c
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; known: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(Preset::Sweep(Box::new(cfg)))
}
