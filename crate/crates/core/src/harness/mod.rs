//! Seeded experiment sweeps and result files.
//!
//! A sweep point is one `(defense, r, ε, α, seed)` combination. Points run on
//! a rayon pool; every point derives its random streams from its seed alone,
//! and rows are emitted in sweep order, so output files are reproducible
//! byte for byte.

pub mod config;
pub mod presets;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_logistic, attack_shadow, AttackConfig, QueryEndpoint};
use crate::data::{load_csv, preprocess, random_coefficients, split, synthesize, Dataset, Schema, SplitDataset};
use crate::defense::{apba_allocate, DefendedEndpoint, EndpointConfig, StaticEndpoint};
use crate::error::{Error, Result};
use crate::mechanisms::{bdpl_keep_probability, MechanismKind, NoiseSpec, ResponseMode};
use crate::metrics::{accuracy, r_test};
use crate::models::{label_of, train_logistic, train_nn, Classifier, TargetModel, TrainConfig};
use crate::monitor::{warning_baseline, Monitor, TrainingInfo};
use crate::rng::derive_seed;

pub use config::{
    AttackSpec, DatasetSource, DefenseSpec, ExperimentConfig, ExperimentKind, ModelKind, RValue, RunOptions,
};
pub use presets::{preset, Preset, PRESET_NAMES};

const STREAM_COEFFS: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_ENDPOINT: u64 = 4;
const STREAM_ATTACK: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One sweep point. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub dataset: String,
    pub defense: String,
    pub attack: String,
    /// Requested duplication count (`auto` or a number).
    pub r: String,
    /// Duplication count the attack ended with.
    pub r_used: Option<usize>,
    pub epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub r_test: Option<f64>,
    pub extraction_status: Option<f64>,
    pub warning_estimate: Option<f64>,
    pub epsilon_spent: Option<f64>,
    pub queries_sent: Option<usize>,
    pub wall_time: f64,
    pub status: RowStatus,
    pub error: String,
}

impl ResultRow {
    fn blank(cfg: &ExperimentConfig, point: &Point) -> Self {
        Self {
            experiment: cfg.id.clone(),
            dataset: cfg.dataset.label(),
            defense: point.defense.name().into(),
            attack: match cfg.kind {
                ExperimentKind::Sweep => cfg.attack.name().into(),
                ExperimentKind::MonitorVsWarning => "qpd-linear".into(),
            },
            r: if cfg.attack == AttackSpec::Benign && cfg.kind == ExperimentKind::Sweep {
                "-".into()
            } else {
                point.r.to_string()
            },
            r_used: None,
            epsilon: point.epsilon,
            alpha: point.alpha,
            seed: point.seed,
            accuracy: None,
            r_test: None,
            extraction_status: None,
            warning_estimate: None,
            epsilon_spent: None,
            queries_sent: None,
            wall_time: 0.0,
            status: RowStatus::Ok,
            error: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    defense: DefenseSpec,
    r: RValue,
    epsilon: f64,
    alpha: f64,
    seed: u64,
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let r_axis: &[RValue] = if cfg.kind == ExperimentKind::Sweep && cfg.attack == AttackSpec::Benign {
        &cfg.r_values[..1]
    } else {
        &cfg.r_values
    };
    let mut out = Vec::new();
    for &defense in &cfg.defenses {
        for &r in r_axis {
            for &epsilon in &cfg.epsilons {
                for &alpha in &cfg.alphas {
                    for &seed in &cfg.seeds {
                        out.push(Point { defense, r, epsilon, alpha, seed });
                    }
                }
            }
        }
    }
    out
}

/// Everything a sweep point needs that depends only on the seed.
pub struct Scenario {
    pub split: SplitDataset,
    pub target: TargetModel,
    pub training: Arc<TrainingInfo>,
}

/// Loads or synthesises the full dataset for one seed.
pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic { n, m, coef_scale } => {
            let (a, b) = random_coefficients(*n, *coef_scale, derive_seed(seed, STREAM_COEFFS));
            synthesize(*n, *m, &a, b, derive_seed(seed, STREAM_DATA))
        }
        DatasetSource::Csv { path, schema } => preprocess(&load_csv(path, &Schema::load(schema)?)?),
    }
}

/// Trains the target model on the training split.
pub fn train_target(kind: ModelKind, train: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TargetModel> {
    let cfg = TrainConfig { seed: derive_seed(seed, STREAM_TRAIN), ..*cfg };
    Ok(match kind {
        ModelKind::Logistic => train_logistic(train, &cfg)?.into(),
        ModelKind::Neural => train_nn(train, &cfg)?.into(),
    })
}

/// Builds the dataset, the split and the trained target for one seed.
pub fn prepare_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let split = split(&load_dataset(&cfg.dataset, seed)?, seed)?;
    let target = train_target(cfg.model, &split.train, &cfg.options.train, seed)?;
    let training = Arc::new(TrainingInfo::from_dataset(&split.train)?);
    Ok(Scenario { split, target, training })
}

/// The answering side of a sweep point: a fixed mechanism or a full MDP
/// endpoint.
pub enum SweepEndpoint {
    Static(StaticEndpoint),
    Defended(Box<DefendedEndpoint>),
}

impl SweepEndpoint {
    pub fn new(
        defense: DefenseSpec,
        epsilon: f64,
        alpha: f64,
        target: &TargetModel,
        training: &Arc<TrainingInfo>,
        opts: &RunOptions,
        seed: u64,
    ) -> Result<Self> {
        let fixed = |spec: NoiseSpec| -> Result<Self> {
            Ok(Self::Static(StaticEndpoint::new(target.clone(), spec, opts.response_mode, opts.clamp, seed)?))
        };
        let mdp = |mechanism: MechanismKind| -> Result<Self> {
            let cfg = EndpointConfig {
                mechanism,
                epsilon,
                alpha,
                delta_zone: opts.delta_zone,
                fixed_p: opts.fixed_p,
                mode: opts.response_mode,
                clamp: opts.clamp,
            };
            Ok(Self::Defended(Box::new(DefendedEndpoint::new(target.clone(), training.clone(), cfg, seed)?)))
        };
        match defense {
            DefenseSpec::None => fixed(NoiseSpec::none()),
            DefenseSpec::Rounding => fixed(NoiseSpec::rounding(opts.decimals)),
            DefenseSpec::BdplFixed => fixed(NoiseSpec::bdpl(epsilon, opts.delta_zone)),
            DefenseSpec::LaplaceFixed => fixed(NoiseSpec::laplace(epsilon)),
            DefenseSpec::GaussianFixed => fixed(NoiseSpec::gaussian(epsilon)),
            DefenseSpec::MdpLaplace => mdp(MechanismKind::Laplace),
            DefenseSpec::MdpGaussian => mdp(MechanismKind::Gaussian),
            DefenseSpec::MdpBdpl => mdp(MechanismKind::Bdpl),
        }
    }

    fn for_point(p: &Point, sc: &Scenario, opts: &RunOptions) -> Result<Self> {
        Self::new(p.defense, p.epsilon, p.alpha, &sc.target, &sc.training, opts, derive_seed(p.seed, STREAM_ENDPOINT))
    }

    pub fn epsilon_spent(&self) -> f64 {
        match self {
            Self::Static(e) => e.epsilon_spent(),
            Self::Defended(e) => e.accountant().spent(),
        }
    }

    /// Monitor estimate of the extraction status; `None` without a monitor.
    pub fn monitor_status(&self) -> Option<f64> {
        match self {
            Self::Static(_) => None,
            Self::Defended(e) => Some(e.monitor().status().overall),
        }
    }
}

impl QueryEndpoint for SweepEndpoint {
    fn dim(&self) -> usize {
        match self {
            Self::Static(e) => e.dim(),
            Self::Defended(e) => e.dim(),
        }
    }

    fn submit(&mut self, q: &[f64]) -> Result<f64> {
        match self {
            Self::Static(e) => e.submit(q),
            Self::Defended(e) => e.submit(q),
        }
    }
}

/// Passes queries through and keeps every `q ‖ z` row.
struct Recorder<'a, E: QueryEndpoint> {
    inner: &'a mut E,
    rows: Vec<Vec<f64>>,
}

impl<E: QueryEndpoint> QueryEndpoint for Recorder<'_, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn submit(&mut self, q: &[f64]) -> Result<f64> {
        let z = self.inner.submit(q)?;
        let mut u = q.to_vec();
        u.push(z);
        self.rows.push(u);
        Ok(z)
    }
}

fn attack_config(p: &Point, opts: &RunOptions) -> AttackConfig {
    let bdpl = matches!(p.defense, DefenseSpec::BdplFixed | DefenseSpec::MdpBdpl);
    AttackConfig {
        ci_threshold: opts.ci_threshold,
        r_cap: opts.r_cap,
        strict_alg1: opts.strict_alg1,
        fixed_r: match p.r {
            RValue::Auto => None,
            RValue::Fixed(r) => Some(r),
        },
        assumed_keep: bdpl.then(|| bdpl_keep_probability(p.epsilon)),
        debias_zone: (bdpl && opts.response_mode == ResponseMode::Probability).then_some(opts.delta_zone),
        seed: derive_seed(p.seed, STREAM_ATTACK),
        ..AttackConfig::default()
    }
}

fn run_sweep_point(cfg: &ExperimentConfig, p: &Point, sc: &Scenario, row: &mut ResultRow) -> Result<()> {
    let opts = &cfg.options;
    let mut ep = SweepEndpoint::for_point(p, sc, opts)?;
    let test = &sc.split.test;
    match cfg.attack {
        AttackSpec::QpdLinear => {
            let rep = attack_logistic(&mut ep, &attack_config(p, opts))?;
            row.accuracy = Some(accuracy(&rep.model, test)?);
            row.r_test = Some(r_test(&sc.target, &rep.model, test)?);
            row.r_used = Some(rep.r);
            row.queries_sent = Some(rep.model.queries_used);
        }
        AttackSpec::QpdShadow => {
            let train_cfg = TrainConfig { seed: derive_seed(p.seed, STREAM_ATTACK), ..opts.train };
            let rep = attack_shadow(&mut ep, &attack_config(p, opts), &train_cfg)?;
            row.accuracy = Some(accuracy(&rep.model, test)?);
            row.r_test = Some(r_test(&sc.target, &rep.model, test)?);
            row.r_used = Some(rep.r);
            row.queries_sent = Some(rep.queries_used);
        }
        AttackSpec::Benign => {
            let (mut correct, mut differs) = (0usize, 0usize);
            for (x, &y) in test.features.iter().zip(&test.labels) {
                let revealed = label_of(ep.submit(x)?);
                correct += usize::from(revealed == y);
                differs += usize::from(revealed != sc.target.predict_label(x)?);
            }
            row.accuracy = Some(correct as f64 / test.len() as f64);
            row.r_test = Some(differs as f64 / test.len() as f64);
            row.queries_sent = Some(test.len());
        }
    }
    row.epsilon_spent = Some(ep.epsilon_spent());
    row.extraction_status = ep.monitor_status();
    Ok(())
}

fn run_monitor_point(cfg: &ExperimentConfig, p: &Point, sc: &Scenario, row: &mut ResultRow) -> Result<()> {
    let opts = &cfg.options;
    let mut ep = SweepEndpoint::for_point(p, sc, opts)?;
    if p.r == RValue::Fixed(0) {
        row.r_used = Some(0);
        row.queries_sent = Some(0);
        row.extraction_status = Some(0.0);
        row.warning_estimate = Some(0.0);
        row.epsilon_spent = Some(0.0);
        return Ok(());
    }
    let mut rec = Recorder { inner: &mut ep, rows: Vec::new() };
    let rep = attack_logistic(&mut rec, &attack_config(p, opts))?;
    let rows = std::mem::take(&mut rec.rows);
    let test = &sc.split.test;
    let mut monitor = Monitor::new(sc.training.clone());
    for u in &rows {
        monitor.observe(u)?;
    }
    row.accuracy = Some(accuracy(&rep.model, test)?);
    row.r_test = Some(r_test(&sc.target, &rep.model, test)?);
    row.r_used = Some(rep.r);
    row.queries_sent = Some(rows.len());
    row.extraction_status = Some(monitor.status().overall);
    row.warning_estimate = Some(warning_baseline(monitor.log(), &sc.target, test)?.agreement);
    row.epsilon_spent = Some(ep.epsilon_spent());
    Ok(())
}

fn execute(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let scenarios: Vec<(u64, std::result::Result<Scenario, String>)> = cfg
        .seeds
        .par_iter()
        .map(|&s| (s, prepare_scenario(cfg, s).map_err(|e| e.to_string())))
        .collect();
    let by_seed: BTreeMap<u64, &std::result::Result<Scenario, String>> =
        scenarios.iter().map(|(s, sc)| (*s, sc)).collect();
    let rows = points(cfg)
        .par_iter()
        .map(|p| {
            let start = Instant::now();
            let mut row = ResultRow::blank(cfg, p);
            let outcome = match by_seed[&p.seed] {
                Err(e) => Err(e.clone()),
                Ok(sc) => match cfg.kind {
                    ExperimentKind::Sweep => run_sweep_point(cfg, p, sc, &mut row),
                    ExperimentKind::MonitorVsWarning => run_monitor_point(cfg, p, sc, &mut row),
                }
                .map_err(|e| e.to_string()),
            };
            if let Err(e) = outcome {
                let blank = ResultRow::blank(cfg, p);
                row = ResultRow { status: RowStatus::Failed, error: e, ..blank };
            }
            if cfg.options.timing {
                row.wall_time = start.elapsed().as_secs_f64();
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Runs every sweep point. Component failures mark the row as failed and
/// the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    match cfg.options.threads {
        None => execute(cfg),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(|| execute(cfg)),
    }
}

/// Fixed-`r` QPD streams scored by the monitor and the warning baseline.
/// The true status is `1 − r_test` of the attacker's extracted model; the
/// monitor goes to `extraction_status` and the surrogate tree to
/// `warning_estimate`. `r = 0` sends nothing and scores both estimators 0.
pub fn monitor_vs_warning(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let cfg = ExperimentConfig { kind: ExperimentKind::MonitorVsWarning, ..cfg.clone() };
    run_experiment(&cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// Per-sweep-point aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub defense: String,
    pub attack: String,
    pub r: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub rows: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, Stat>,
}

/// Means and sample standard deviations of the numeric columns of successful
/// rows, grouped by everything except the seed, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryEntry> {
    let mut order: Vec<(String, String, String, u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, u64, u64), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.defense.clone(), row.attack.clone(), row.r.clone(), row.epsilon.to_bits(), row.alpha.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&&ResultRow> = members.iter().filter(|r| r.status == RowStatus::Ok).collect();
            let columns: [(&str, fn(&ResultRow) -> Option<f64>); 7] = [
                ("accuracy", |r| r.accuracy),
                ("r_test", |r| r.r_test),
                ("extraction_status", |r| r.extraction_status),
                ("warning_estimate", |r| r.warning_estimate),
                ("epsilon_spent", |r| r.epsilon_spent),
                ("queries_sent", |r| r.queries_sent.map(|q| q as f64)),
                ("r_used", |r| r.r_used.map(|q| q as f64)),
            ];
            let metrics = columns
                .iter()
                .filter_map(|(name, get)| {
                    let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
                    Stat::of(&vals).map(|s| ((*name).to_string(), s))
                })
                .collect();
            SummaryEntry {
                defense: key.0,
                attack: key.1,
                r: key.2,
                epsilon: f64::from_bits(key.3),
                alpha: f64::from_bits(key.4),
                rows: members.len(),
                failed: members.len() - ok.len(),
                metrics,
            }
        })
        .collect()
}

pub fn write_results_csv<W: std::io::Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Path of the JSON summary written next to a result CSV.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

/// Writes the rows as CSV to `path` and the per-point summary as JSON next
/// to it. Returns the summary path.
pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<PathBuf> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows".into()));
    }
    let path = path.as_ref();
    write_results_csv(rows, std::fs::File::create(path)?)?;
    let json_path = summary_path(path);
    std::fs::write(&json_path, serde_json::to_string_pretty(&summarize(rows))?)?;
    Ok(json_path)
}

/// One grid point of the budget schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaPoint {
    #[serde(rename = "L")]
    pub leakage: f64,
    /// Allocation returned by the accountant.
    pub epsilon_i: f64,
    /// `√(9ε²/(4L_t³) · (L_t − L))` evaluated directly.
    pub closed_form: f64,
}

/// The allocation schedule on `points` evenly spaced leakage values in
/// `[0, L_t]`.
pub fn parabola_curve(threshold: f64, epsilon: f64, points: usize) -> Result<Vec<ParabolaPoint>> {
    if points < 2 || !(threshold > 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("parabola needs ≥ 2 points and positive L_t, ε".into()));
    }
    Ok((0..points)
        .map(|k| {
            let leakage = threshold * k as f64 / (points - 1) as f64;
            ParabolaPoint {
                leakage,
                epsilon_i: apba_allocate(epsilon, leakage, threshold, None),
                closed_form: (9.0 * epsilon * epsilon / (4.0 * threshold.powi(3)) * (threshold - leakage)).sqrt(),
            }
        })
        .collect())
}

pub fn write_parabola_csv(points: &[ParabolaPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for pt in points {
        w.serialize(pt)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(defenses: Vec<DefenseSpec>, attack: AttackSpec) -> ExperimentConfig {
        ExperimentConfig {
            id: "tiny".into(),
            kind: ExperimentKind::Sweep,
            dataset: DatasetSource::Synthetic { n: 2, m: 200, coef_scale: 3.0 },
            model: ModelKind::Logistic,
            defenses,
            attack,
            r_values: vec![RValue::Fixed(2)],
            epsilons: vec![1.0],
            alphas: vec![1.0],
            seeds: vec![0, 1],
            options: RunOptions { train: TrainConfig { epochs: 300, ..TrainConfig::default() }, ..RunOptions::default() },
        }
    }

    #[test]
    fn unprotected_rows_recover_the_target() {
        let rows = run_experiment(&tiny(vec![DefenseSpec::None], AttackSpec::QpdLinear)).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.status, RowStatus::Ok, "{}", r.error);
            assert_eq!(r.r_test, Some(0.0));
            assert_eq!(r.queries_sent, Some(2 * 3));
        }
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        let mut cfg = tiny(vec![DefenseSpec::MdpLaplace], AttackSpec::Benign);
        cfg.options.response_mode = crate::mechanisms::ResponseMode::Label;
        let rows = run_experiment(&cfg).unwrap();
        assert!(rows.iter().all(|r| r.status == RowStatus::Failed && !r.error.is_empty()));
    }

    #[test]
    fn one_row_csv_has_two_lines() {
        let mut cfg = tiny(vec![DefenseSpec::None], AttackSpec::QpdLinear);
        cfg.seeds = vec![3];
        let rows = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let json = emit_results(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("experiment,dataset,defense,attack,r,r_used,epsilon,alpha,seed,accuracy,r_test,"));
        assert!(json.exists());
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }

    #[test]
    fn parabola_matches_closed_form() {
        let pts = parabola_curve(10.0, 20.0 / 3.0, 100).unwrap();
        assert_eq!(pts.len(), 100);
        assert!((pts[0].epsilon_i - 1.0).abs() < 1e-15);
        assert_eq!(pts[99].epsilon_i, 0.0);
        assert!(pts.iter().all(|p| (p.epsilon_i - p.closed_form).abs() < 1e-12));
    }
}
