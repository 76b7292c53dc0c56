//! Experiment configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attack::{DEFAULT_CI_THRESHOLD, DEFAULT_R_CAP};
use crate::error::{Error, Result};
use crate::mechanisms::ResponseMode;
use crate::models::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Uniform features in `[-1, 1]^n` labelled by a random logistic model
    /// whose coefficients are drawn from `±coef_scale`.
    Synthetic { n: usize, m: usize, coef_scale: f64 },
    Csv { path: PathBuf, schema: PathBuf },
}

impl DatasetSource {
    pub fn label(&self) -> String {
        match self {
            Self::Synthetic { n, m, .. } => format!("synthetic-n{n}-m{m}"),
            Self::Csv { path, .. } => path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Logistic,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseSpec {
    None,
    Rounding,
    BdplFixed,
    LaplaceFixed,
    GaussianFixed,
    MdpLaplace,
    MdpGaussian,
    MdpBdpl,
}

impl DefenseSpec {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Rounding => "rounding",
            Self::BdplFixed => "bdpl-fixed",
            Self::LaplaceFixed => "laplace-fixed",
            Self::GaussianFixed => "gaussian-fixed",
            Self::MdpLaplace => "mdp-laplace",
            Self::MdpGaussian => "mdp-gaussian",
            Self::MdpBdpl => "mdp-bdpl",
        }
    }

    pub fn is_mdp(self) -> bool {
        matches!(self, Self::MdpLaplace | Self::MdpGaussian | Self::MdpBdpl)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackSpec {
    #[default]
    QpdLinear,
    QpdShadow,
    /// Not an attack: the test inputs are sent once each, to measure the
    /// utility of the defended answers.
    Benign,
}

impl AttackSpec {
    pub fn name(self) -> &'static str {
        match self {
            Self::QpdLinear => "qpd-linear",
            Self::QpdShadow => "qpd-shadow",
            Self::Benign => "benign",
        }
    }
}

/// Duplication count on the `r` axis: the adaptive search or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RValue {
    Auto,
    Fixed(usize),
}

impl fmt::Display for RValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for RValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(r) => s.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for RValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(Self::Fixed(r)),
            Raw::Text(t) if t == "auto" => Ok(Self::Auto),
            Raw::Text(t) => t
                .parse()
                .map(Self::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("r must be a count or \"auto\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Attack (or benign stream) against each defense; one row per point.
    #[default]
    Sweep,
    /// Fixed-`r` QPD streams scored by the monitor and the warning baseline.
    MonitorVsWarning,
}

fn default_ci() -> f64 {
    DEFAULT_CI_THRESHOLD
}
fn default_r_cap() -> usize {
    DEFAULT_R_CAP
}
fn default_zone() -> f64 {
    0.125
}
fn default_decimals() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default = "default_ci")]
    pub ci_threshold: f64,
    #[serde(default = "default_r_cap")]
    pub r_cap: usize,
    #[serde(default)]
    pub strict_alg1: bool,
    #[serde(default)]
    pub fixed_p: bool,
    #[serde(default)]
    pub clamp: bool,
    #[serde(default = "default_zone")]
    pub delta_zone: f64,
    #[serde(default = "default_decimals")]
    pub decimals: u32,
    #[serde(default)]
    pub response_mode: ResponseMode,
    #[serde(default)]
    pub train: TrainConfig,
    /// Record wall-clock time per row; off by default so output files are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            ci_threshold: default_ci(),
            r_cap: default_r_cap(),
            strict_alg1: false,
            fixed_p: false,
            clamp: false,
            delta_zone: default_zone(),
            decimals: default_decimals(),
            response_mode: ResponseMode::Probability,
            train: TrainConfig::default(),
            timing: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub kind: ExperimentKind,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelKind,
    pub defenses: Vec<DefenseSpec>,
    #[serde(default)]
    pub attack: AttackSpec,
    pub r_values: Vec<RValue>,
    pub epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub options: RunOptions,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let axis = |name: &str, empty: bool| {
            if empty {
                Err(Error::InvalidConfig(format!("sweep axis `{name}` is empty")))
            } else {
                Ok(())
            }
        };
        axis("defenses", self.defenses.is_empty())?;
        axis("r_values", self.r_values.is_empty())?;
        axis("epsilons", self.epsilons.is_empty())?;
        axis("alphas", self.alphas.is_empty())?;
        axis("seeds", self.seeds.is_empty())?;
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::InvalidConfig(format!("seed {dup} appears twice")));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {e}")));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {a}")));
        }
        if self.kind == ExperimentKind::Sweep && self.r_values.contains(&RValue::Fixed(0)) {
            return Err(Error::InvalidConfig("fixed r must be at least 1".into()));
        }
        if self.kind == ExperimentKind::MonitorVsWarning && self.r_values.contains(&RValue::Auto) {
            return Err(Error::InvalidConfig("monitor-vs-warning needs fixed r values".into()));
        }
        if let DatasetSource::Synthetic { n, m, coef_scale } = self.dataset {
            if n == 0 || m < n + 2 || !(coef_scale >= 0.0) {
                return Err(Error::InvalidConfig("synthetic dataset needs n ≥ 1, m ≥ n + 2, coef_scale ≥ 0".into()));
            }
        }
        if !(self.options.ci_threshold > 0.0) {
            return Err(Error::InvalidConfig("ci_threshold must be positive".into()));
        }
        if self.options.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        self.options.train.validate()
    }
}
