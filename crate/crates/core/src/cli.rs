//! Command-line front end: `generate`, `train`, `evaluate`, `compare`, `sweep`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{DataSource, FederationSpec};
use crate::error::{Error, Result};
use crate::experiment::{
    compare_runs, default_run_dir, evaluate_run, generate, load_summary, resume_experiment,
    run_experiment, sweep, ExperimentConfig, RunSummary, SweepParam,
};
use crate::fl::StrategyKind;

#[derive(Debug, Parser)]
#[command(name = "grpfed", version, about = "Federated learning simulator with adaptive aggregation and regularized personalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (or ingest) a federation and write its manifest and client files.
    Generate(GenerateArgs),
    /// Train one strategy and write curves, evaluations, checkpoints and a summary.
    Train(TrainArgs),
    /// Re-evaluate a run directory from its checkpoint.
    Evaluate(EvaluateArgs),
    /// Tabulate mean ± std of the test scores across runs, grouped by label.
    Compare(CompareArgs),
    /// Sweep beta, q0 or eta_q over several seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Experiment config (JSON). Defaults to the reference desk-scale setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub q0: Option<f64>,
    #[arg(long = "eta-q")]
    pub eta_q: Option<f64>,
    #[arg(long)]
    pub client_fraction: Option<f64>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Seed of the synthetic federation.
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub seed: u64,
    /// Run directory; defaults to the config's `output_dir` or `runs/<label>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint in `--out` instead of starting over.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories (with summary.json) or experiment config files to run.
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// One of beta, q0, eta_q.
    #[arg(long, default_value = "beta")]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self, seed: u64) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::reference(self.strategy.unwrap_or(StrategyKind::GrpFed), seed),
        };
        let s = &mut cfg.strategy;
        if let Some(k) = self.strategy {
            s.kind = k;
        }
        macro_rules! set {
            ($($field:ident => $dst:expr),* $(,)?) => {
                $( if let Some(v) = self.$field.clone() { $dst = v; } )*
            };
        }
        set!(rounds => s.rounds, beta => s.beta, q0 => s.q0, eta_q => s.eta_q,
             client_fraction => s.client_fraction, local_epochs => s.local_epochs, lr => s.lr);
        set!(eval_every => cfg.eval_every);
        if self.label.is_some() {
            cfg.label = self.label.clone();
        }
        if self.data_seed.is_some() || self.clients.is_some() || self.rho.is_some() || self.tau.is_some() {
            let DataSource::Synthetic(spec) = &mut cfg.data else {
                return Err(Error::Config("synthetic-data overrides given for a tabular data source".into()));
            };
            set!(data_seed => spec.seed, clients => spec.clients, rho => spec.rho, tau => spec.tau);
        }
        Ok(cfg)
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.overrides.resolve(0)?;
            if let DataSource::Synthetic(spec) = &cfg.data {
                spec.validate()?;
            }
            let manifest = generate(&cfg.data, &args.out)?;
            println!(
                "wrote {} clients ({} classes) to {}",
                manifest.clients.len(),
                manifest.n_classes,
                args.out.display()
            );
        }
        Command::Train(args) => {
            let mut cfg = args.overrides.resolve(args.seed)?;
            cfg.seed = args.seed;
            let dir = args.out.clone().unwrap_or_else(|| default_run_dir(&cfg));
            let outcome = if args.resume {
                resume_experiment(&dir)?
            } else {
                run_experiment(&cfg, Some(&dir))?
            };
            let e = &outcome.final_eval;
            println!(
                "{} after {} rounds: T_g {:.4} T_l {:.4} T_p {:.4} T_r {:.4} ({})",
                outcome.config.label(),
                outcome.simulation.round(),
                e.t_g,
                e.t_l,
                e.t_p,
                e.t_r,
                dir.display()
            );
        }
        Command::Evaluate(args) => {
            let report = evaluate_run(&args.run)?;
            write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Compare(args) => {
            let mut summaries: Vec<RunSummary> = Vec::new();
            for input in &args.inputs {
                if input.is_dir() {
                    summaries.push(load_summary(input)?);
                } else {
                    let cfg = ExperimentConfig::load(input)?;
                    summaries.push(run_experiment(&cfg, None)?.summary()?);
                }
            }
            let table = compare_runs(&summaries)?;
            write_or_print(args.out.as_deref(), &table.to_csv())?;
        }
        Command::Sweep(args) => {
            let cfg = args.overrides.resolve(0)?;
            let table = sweep(&cfg, args.param, &args.values, &args.seeds)?;
            write_or_print(args.out.as_deref(), &table.to_csv())?;
        }
    }
    Ok(())
}

/// Reference synthetic spec, exposed for documentation and tests.
pub fn reference_spec() -> FederationSpec {
    FederationSpec::default()
}
