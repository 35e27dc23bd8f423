//! Reproducible experiment runs: configuration, the round loop with periodic
//! evaluation and checkpointing, cross-seed comparison and parameter sweeps.

mod compare;
mod sweep;

pub use compare::{compare_runs, summarize, ComparisonRow, ComparisonTable, Stat};
pub use sweep::{sweep, SweepParam, SweepRow, SweepTable};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{write_client_files, DataSource, Federation, FederationManifest, FederationSpec};
use crate::error::{Error, Result};
use crate::fl::{RoundReport, Simulation, StrategyConfig, StrategyKind};
use crate::metrics::{evaluate, CurveTable, EvalReport};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyConfig,
    /// Rounds between evaluations; the final round is always evaluated.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Training seed; overrides `strategy.seed` on resolution.
    pub seed: u64,
    /// Display name used to group runs in comparisons; defaults to the
    /// strategy name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn default_data() -> DataSource {
    DataSource::Synthetic(FederationSpec::default())
}

fn default_strategy() -> StrategyConfig {
    StrategyConfig::new(StrategyKind::GrpFed)
}

fn default_eval_every() -> usize {
    10
}

impl ExperimentConfig {
    /// Reference desk-scale experiment for a strategy.
    pub fn reference(kind: StrategyKind, seed: u64) -> Self {
        ExperimentConfig {
            data: default_data(),
            strategy: StrategyConfig::new(kind),
            eval_every: default_eval_every(),
            output_dir: None,
            seed,
            label: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Copies the run seed into the strategy and applies strategy reductions.
    pub fn resolved(mut self) -> Self {
        self.strategy.seed = self.seed;
        self.strategy = self.strategy.resolved();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate(),
            DataSource::Tabular { path, .. } => {
                if Path::new(path).exists() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("data file {path} does not exist")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.strategy.kind.name().to_string())
    }

    /// Replicate `seed`: training seed `seed` and, for synthetic data, data
    /// seed `base + seed`.
    pub fn replicate(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.seed = spec.seed.wrapping_add(seed);
        }
        cfg
    }
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub reports: Vec<RoundReport>,
    pub evaluations: Vec<EvalReport>,
    pub final_eval: EvalReport,
    pub simulation: Simulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub label: String,
    pub strategy: StrategyKind,
    pub rounds_completed: usize,
    /// Resolved configuration; loss-power fields are omitted for LocalOnly.
    pub config: serde_json::Value,
    pub t_g: f64,
    pub t_p: f64,
    pub t_r: f64,
    pub t_l: f64,
    pub final_max_loss: f64,
    pub final_mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lambdas: Option<Vec<f64>>,
}

impl RunOutcome {
    pub fn summary(&self) -> Result<RunSummary> {
        let mut config = serde_json::to_value(&self.config)?;
        if self.config.strategy.kind == StrategyKind::LocalOnly {
            if let Some(s) = config.get_mut("strategy").and_then(|s| s.as_object_mut()) {
                s.remove("q0");
                s.remove("eta_q");
            }
        }
        let last = self.reports.last();
        Ok(RunSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            label: self.config.label(),
            strategy: self.config.strategy.kind,
            rounds_completed: self.simulation.round(),
            config,
            t_g: self.final_eval.t_g,
            t_p: self.final_eval.t_p,
            t_r: self.final_eval.t_r,
            t_l: self.final_eval.t_l,
            final_max_loss: last.map_or(f64::NAN, |r| r.max_loss),
            final_mean_loss: last.map_or(f64::NAN, |r| r.mean_loss),
            final_q: last.and_then(|r| r.q),
            final_lambdas: last.and_then(|r| r.lambdas.clone()),
        })
    }
}

pub const FILE_CONFIG: &str = "resolved_config.json";
pub const FILE_MANIFEST: &str = "manifest.json";
pub const FILE_ROUNDS: &str = "rounds.jsonl";
pub const FILE_CURVES_CSV: &str = "curves.csv";
pub const FILE_CURVES_JSON: &str = "curves.json";
pub const FILE_EVALS: &str = "evaluations.jsonl";
pub const FILE_EVAL_JSON: &str = "eval.json";
pub const FILE_EVAL_CSV: &str = "eval.csv";
pub const FILE_SUMMARY: &str = "summary.json";
pub const FILE_CHECKPOINT: &str = "checkpoint.json";

/// Metric files whose bytes must be identical across repeated runs.
pub const METRIC_FILES: &[&str] = &[
    FILE_ROUNDS,
    FILE_CURVES_CSV,
    FILE_CURVES_JSON,
    FILE_EVALS,
    FILE_EVAL_JSON,
    FILE_EVAL_CSV,
    FILE_SUMMARY,
];

/// Writes the generated federation: `manifest.json` plus `clients/client_NNN.csv`.
pub fn generate(source: &DataSource, out: &Path) -> Result<FederationManifest> {
    let federation = source.load()?;
    let manifest = FederationManifest::new(source, &federation);
    fs::create_dir_all(out)?;
    fs::write(out.join(FILE_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    write_client_files(&federation, &out.join("clients"))?;
    Ok(manifest)
}

/// Runs a full experiment. With `out`, writes the resolved config and manifest
/// up front, a checkpoint at every evaluation, and metric files at the end.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let config = config.clone().resolved();
    config.validate()?;
    let federation = config.data.load()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FILE_CONFIG), serde_json::to_string_pretty(&config)? + "\n")?;
        let manifest = FederationManifest::new(&config.data, &federation);
        fs::write(dir.join(FILE_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    let simulation = Simulation::for_federation(config.strategy.clone(), &federation)?;
    run_simulation(config, federation, simulation, out)
}

/// Continues a run from its directory's config and checkpoint.
pub fn resume_experiment(dir: &Path) -> Result<RunOutcome> {
    let config = ExperimentConfig::load(&dir.join(FILE_CONFIG))?;
    let federation = config.data.load()?;
    let mut simulation = Simulation::load_checkpoint(&dir.join(FILE_CHECKPOINT))?;
    // Only the round budget may change between the stored config and the checkpoint.
    let mut expected = config.strategy.clone();
    expected.rounds = simulation.config.rounds;
    if expected != simulation.config {
        return Err(Error::Config(format!(
            "{} does not match the checkpoint's strategy config",
            dir.join(FILE_CONFIG).display()
        )));
    }
    if config.strategy.rounds < simulation.round() {
        return Err(Error::Config(format!(
            "checkpoint is at round {} but the config asks for {} rounds",
            simulation.round(),
            config.strategy.rounds
        )));
    }
    simulation.config.rounds = config.strategy.rounds;
    run_simulation(config, federation, simulation, Some(dir))
}

fn run_simulation(
    config: ExperimentConfig,
    federation: Federation,
    mut simulation: Simulation,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let mut reports: Vec<RoundReport> = Vec::with_capacity(config.strategy.rounds);
    let mut evaluations = Vec::new();
    if let Some(dir) = out {
        if simulation.round() > 0 {
            reports = read_jsonl(&dir.join(FILE_ROUNDS))?;
            reports.truncate(simulation.round());
            evaluations = read_jsonl::<EvalReport>(&dir.join(FILE_EVALS))?
                .into_iter()
                .filter(|e| e.round <= simulation.round())
                .collect();
        }
    }
    let mut curves = crate::metrics::record_curves(&reports)?;
    while !simulation.is_finished() {
        let report = simulation.run_round(&federation)?;
        curves.push(&report)?;
        let round = report.round;
        reports.push(report);
        if round % config.eval_every == 0 || round == config.strategy.rounds {
            let eval = evaluate(&simulation, &federation, CurveTable::new())?;
            info!(
                "{} round {round}: T_g {:.4} T_p {:.4} T_r {:.4} T_l {:.4}",
                config.label(),
                eval.t_g,
                eval.t_p,
                eval.t_r,
                eval.t_l
            );
            evaluations.push(eval);
            if let Some(dir) = out {
                write_jsonl(&dir.join(FILE_ROUNDS), &reports)?;
                write_jsonl(&dir.join(FILE_EVALS), &evaluations)?;
                simulation.save_checkpoint(&dir.join(FILE_CHECKPOINT))?;
            }
        }
    }
    let final_eval = evaluate(&simulation, &federation, curves.clone())?;
    let outcome = RunOutcome {
        config,
        reports,
        evaluations,
        final_eval,
        simulation,
    };
    if let Some(dir) = out {
        write_outputs(&outcome, &curves, dir)?;
    }
    Ok(outcome)
}

fn write_outputs(outcome: &RunOutcome, curves: &CurveTable, dir: &Path) -> Result<()> {
    write_jsonl(&dir.join(FILE_ROUNDS), &outcome.reports)?;
    write_jsonl(&dir.join(FILE_EVALS), &outcome.evaluations)?;
    fs::write(dir.join(FILE_CURVES_CSV), curves.to_csv())?;
    fs::write(dir.join(FILE_CURVES_JSON), serde_json::to_string_pretty(curves)? + "\n")?;
    fs::write(dir.join(FILE_EVAL_JSON), serde_json::to_string_pretty(&outcome.final_eval)? + "\n")?;
    fs::write(dir.join(FILE_EVAL_CSV), outcome.final_eval.to_csv())?;
    fs::write(dir.join(FILE_SUMMARY), serde_json::to_string_pretty(&outcome.summary()?)? + "\n")?;
    outcome.simulation.save_checkpoint(&dir.join(FILE_CHECKPOINT))?;
    Ok(())
}

/// Re-evaluates a run directory from its checkpoint.
pub fn evaluate_run(dir: &Path) -> Result<EvalReport> {
    let config = ExperimentConfig::load(&dir.join(FILE_CONFIG))?;
    let federation = config.data.load()?;
    let simulation = Simulation::load_checkpoint(&dir.join(FILE_CHECKPOINT))?;
    let reports: Vec<RoundReport> = read_jsonl(&dir.join(FILE_ROUNDS)).unwrap_or_default();
    let curves = crate::metrics::record_curves(reports.iter().take(simulation.round()))?;
    evaluate(&simulation, &federation, curves)
}

pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(FILE_SUMMARY);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("invalid {}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        let _ = writeln!(out, "{}", serde_json::to_string(item)?);
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Default run directory for a config: `output_dir` or `runs/<label>-seed<seed>`.
pub fn default_run_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", config.label(), config.seed)))
}
