//! `mdplab`: train targets, run the QPD attack, serve defended answers and
//! run experiment sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mdp_lab::attack::{attack_logistic, AttackConfig};
use mdp_lab::data::split;
use mdp_lab::defense::{DefendedEndpoint, EndpointConfig};
use mdp_lab::harness::{
    emit_results, load_dataset, parabola_curve, preset, read_results_csv, run_experiment, summarize, train_target,
    write_parabola_csv, DatasetSource, DefenseSpec, ExperimentConfig, ModelKind, Preset, RowStatus, RunOptions,
    SummaryEntry,
};
use mdp_lab::mechanisms::{bdpl_keep_probability, MechanismKind, ResponseMode};
use mdp_lab::metrics::evaluate;
use mdp_lab::models::TargetModel;
use mdp_lab::monitor::TrainingInfo;

#[derive(Parser)]
#[command(name = "mdplab", version, about = "Model extraction attack and monitoring-based DP defense laboratory")]
struct Cli {
    /// Base seed for data, training and noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Re-send all copies on each doubling of r instead of topping up.
    #[arg(long, global = true)]
    strict_alg1: bool,
    /// Keep the allocation scale fixed at its initial value.
    #[arg(long, global = true)]
    fixed_p: bool,
    /// Clamp noisy probabilities into [0, 1].
    #[arg(long, global = true)]
    clamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file; needs --schema. Without it a synthetic dataset is used.
    #[arg(long, requires = "schema")]
    csv: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    m: usize,
    #[arg(long, default_value_t = 4.0)]
    coef_scale: f64,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        match (&self.csv, &self.schema) {
            (Some(path), Some(schema)) => DatasetSource::Csv { path: path.clone(), schema: schema.clone() },
            _ => DatasetSource::Synthetic { n: self.n, m: self.m, coef_scale: self.coef_scale },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    Laplace,
    Gaussian,
    Bdpl,
}

impl From<Mechanism> for MechanismKind {
    fn from(m: Mechanism) -> Self {
        match m {
            Mechanism::Laplace => Self::Laplace,
            Mechanism::Gaussian => Self::Gaussian,
            Mechanism::Bdpl => Self::Bdpl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a target model and write it as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "logistic")]
        model: ModelArg,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Run the QPD linear attack against a (possibly defended) target.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        /// Target model JSON from `train`.
        #[arg(long)]
        model: PathBuf,
        /// none, rounding, bdpl-fixed, laplace-fixed, gaussian-fixed,
        /// mdp-laplace, mdp-gaussian or mdp-bdpl.
        #[arg(long, default_value = "none", value_parser = parse_defense)]
        defense: DefenseSpec,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Fixed duplication count; adaptive when absent.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        r_cap: Option<usize>,
        /// Report JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a batch of queries through the MDP endpoint.
    Defend {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Headerless CSV, one query per line.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value = "laplace")]
        mechanism: Mechanism,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Reveal labels instead of probabilities (BDPL only).
        #[arg(long)]
        labels: bool,
        /// Responses CSV: value, epsilon_i, leakage, status.
        #[arg(long, default_value = "responses.csv")]
        out: PathBuf,
        /// Also write the accountant's allocation history.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a named preset or a JSON experiment config.
    Experiment {
        /// Preset name or path to a config file.
        target: String,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Record per-row wall time (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarise a results CSV.
    Report {
        results: PathBuf,
        /// Write the summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Logistic,
    Neural,
}

fn parse_defense(s: &str) -> Result<DefenseSpec, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown defense {s:?}"))
}

fn options(cli: &Cli) -> RunOptions {
    RunOptions { strict_alg1: cli.strict_alg1, fixed_p: cli.fixed_p, clamp: cli.clamp, ..RunOptions::default() }
}

fn training_info(data: &DataArgs, seed: u64) -> anyhow::Result<(Arc<TrainingInfo>, mdp_lab::data::Dataset)> {
    let parts = split(&load_dataset(&data.source(), seed)?, seed)?;
    Ok((Arc::new(TrainingInfo::from_dataset(&parts.train)?), parts.test))
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn fmt_stat(e: &SummaryEntry, key: &str) -> String {
    e.metrics.get(key).map_or_else(|| "-".into(), |s| format!("{:.4}±{:.4}", s.mean, s.std))
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Train { data, model, out } => {
            let parts = split(&load_dataset(&data.source(), cli.seed)?, cli.seed)?;
            let kind = match model {
                ModelArg::Logistic => ModelKind::Logistic,
                ModelArg::Neural => ModelKind::Neural,
            };
            let target = train_target(kind, &parts.train, &RunOptions::default().train, cli.seed)?;
            target.save(out)?;
            let acc = mdp_lab::metrics::accuracy(&target, &parts.test)?;
            eprintln!("wrote {} (test accuracy {acc:.4})", out.display());
        }
        Command::Attack { data, model, defense, epsilon, alpha, r, r_cap, out } => {
            let target = TargetModel::load(model)?;
            let (training, test) = training_info(data, cli.seed)?;
            let opts = options(cli);
            let mut ep = mdp_lab::harness::SweepEndpoint::new(
                *defense, *epsilon, *alpha, &target, &training, &opts, cli.seed,
            )?;
            let bdpl = matches!(defense, DefenseSpec::BdplFixed | DefenseSpec::MdpBdpl);
            let cfg = AttackConfig {
                strict_alg1: cli.strict_alg1,
                fixed_r: *r,
                r_cap: r_cap.unwrap_or(opts.r_cap),
                assumed_keep: bdpl.then(|| bdpl_keep_probability(*epsilon)),
                debias_zone: (bdpl && opts.response_mode == ResponseMode::Probability).then_some(opts.delta_zone),
                seed: cli.seed,
                ..AttackConfig::default()
            };
            let rep = attack_logistic(&mut ep, &cfg)?;
            let eval = evaluate(&target, &rep.model, &test, Some((10_000, cli.seed)))?;
            let report = json!({
                "defense": defense.name(),
                "r": rep.r,
                "converged": rep.converged,
                "max_ci_length": rep.max_ci_length,
                "noise_family": rep.family,
                "a": rep.model.a,
                "b": rep.model.b,
                "queries_sent": rep.model.queries_used,
                "epsilon_spent": ep.epsilon_spent(),
                "extraction_status": ep.monitor_status(),
                "metrics": eval,
            });
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Defend { data, model, queries, mechanism, epsilon, alpha, labels, out, history } => {
            let target = TargetModel::load(model)?;
            let (training, _) = training_info(data, cli.seed)?;
            let cfg = EndpointConfig {
                fixed_p: cli.fixed_p,
                clamp: cli.clamp,
                mode: if *labels { ResponseMode::Label } else { ResponseMode::Probability },
                ..EndpointConfig::new((*mechanism).into(), *epsilon, *alpha)
            };
            let mut ep = DefendedEndpoint::new(target, training, cfg, cli.seed)?;
            let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(queries)?;
            let mut writer = csv::Writer::from_path(out)?;
            for record in reader.deserialize::<Vec<f64>>() {
                writer.serialize(ep.mdp_respond(&record?)?)?;
            }
            writer.flush()?;
            if let Some(h) = history {
                ep.accountant().save_history_csv(h)?;
            }
            let acc = ep.accountant();
            eprintln!(
                "answered {} queries: spent {:.6} of {epsilon}, leakage {:.3} of {:.3}{}",
                acc.history().len(),
                acc.spent(),
                acc.leakage(),
                acc.threshold(),
                if ep.is_refusing() { ", now refusing" } else { "" }
            );
        }
        Command::Experiment { target, out, timing, threads } => {
            let loaded = if Path::new(target).is_file() {
                Preset::Sweep(Box::new(ExperimentConfig::load(target)?))
            } else {
                preset(target)?
            };
            match loaded {
                Preset::Parabola { threshold, epsilon, points } => {
                    write_parabola_csv(&parabola_curve(threshold, epsilon, points)?, out)?;
                    eprintln!("wrote {}", out.display());
                }
                Preset::Sweep(cfg) => {
                    let mut cfg = *cfg;
                    let o = &mut cfg.options;
                    o.strict_alg1 |= cli.strict_alg1;
                    o.fixed_p |= cli.fixed_p;
                    o.clamp |= cli.clamp;
                    o.timing |= *timing;
                    o.threads = threads.or(o.threads);
                    for s in &mut cfg.seeds {
                        *s = s.wrapping_add(cli.seed);
                    }
                    let rows = run_experiment(&cfg)?;
                    let summary = emit_results(&rows, out)?;
                    let failed = rows.iter().filter(|r| r.status == RowStatus::Failed).count();
                    eprintln!("wrote {} rows to {} and {}", rows.len(), out.display(), summary.display());
                    if failed > 0 {
                        for r in rows.iter().filter(|r| r.status == RowStatus::Failed).take(5) {
                            eprintln!("failed: {} seed {}: {}", r.defense, r.seed, r.error);
                        }
                        eprintln!("{failed} row(s) failed");
                        return Ok(false);
                    }
                }
            }
        }
        Command::Report { results, out } => {
            let rows = read_results_csv(results)?;
            if rows.is_empty() {
                bail!("{} has no rows", results.display());
            }
            let summary = summarize(&rows);
            println!(
                "{:<16} {:<11} {:>5} {:>6} {:>5} {:>4} {:>15} {:>15} {:>15} {:>15}",
                "defense", "attack", "r", "eps", "alpha", "n", "accuracy", "1-r_test", "monitor", "warning"
            );
            for e in &summary {
                let agree = e.metrics.get("r_test").map_or_else(
                    || "-".into(),
                    |s| format!("{:.4}±{:.4}", 1.0 - s.mean, s.std),
                );
                println!(
                    "{:<16} {:<11} {:>5} {:>6} {:>5} {:>4} {:>15} {:>15} {:>15} {:>15}",
                    e.defense,
                    e.attack,
                    e.r,
                    e.epsilon,
                    e.alpha,
                    e.rows - e.failed,
                    fmt_stat(e, "accuracy"),
                    agree,
                    fmt_stat(e, "extraction_status"),
                    fmt_stat(e, "warning_estimate"),
                );
            }
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&summary)?)?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
