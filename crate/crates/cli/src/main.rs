use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixcourse::commands::{
    cmd_classify_posthoc, cmd_evaluate, cmd_fit, cmd_personalize, cmd_select, cmd_simulate, EvaluateArgs, FitArgs, FitSettings, PersonalizeArgs, PosthocArgs, SelectArgs,
    SimulateArgs,
};
use mixcourse::study::StudyConfig;
use mixcourse::{CliError, CliResult};
use mixcourse_core::saem::IndicatorUpdate;
use mixcourse_core::simulator::scenario_preset;

/// Mixture disease course mapping.
#[derive(Parser)]
#[command(name = "mixcourse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset from a preset scenario.
    Simulate {
        #[arg(long)]
        scenario: String,
        /// Number of patients (preset default otherwise).
        #[arg(long)]
        patients: Option<usize>,
        /// Observation noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        /// Fixed-effects JSON document replacing the defaults.
        #[arg(long)]
        fixed_effects: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the mixture model.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clusters: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Trace CSV location (default OUT/trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Individual parameters and memberships of new patients under a fitted model.
    Personalize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-cluster fit followed by Gaussian-mixture clustering of the individual parameters.
    ClassifyPosthoc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clusters: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against truth, or run a replicate study.
    Evaluate {
        /// Simulation directory (truth.csv, truth.json).
        #[arg(long, conflicts_with = "scenario", requires = "pred")]
        truth: Option<PathBuf>,
        /// Fit or post-hoc output directory (membership.csv, clusters.csv).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Preset scenario of a replicate study.
        #[arg(long, required_unless_present = "truth", requires = "seed")]
        scenario: Option<String>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 300)]
        patients: usize,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long)]
        burnin: Option<f64>,
        #[arg(long, value_enum, default_value_t = Indicator::Soft)]
        indicator: Indicator,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the number of clusters by ICL.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Candidate cluster counts.
        #[arg(long, value_delimiter = ',', required = true)]
        clusters: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Indicator {
    Hard,
    Sample,
    Soft,
}

impl From<Indicator> for IndicatorUpdate {
    fn from(i: Indicator) -> Self {
        match i {
            Indicator::Hard => IndicatorUpdate::HardArgmax,
            Indicator::Sample => IndicatorUpdate::Sample,
            Indicator::Soft => IndicatorUpdate::Soft,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    sources: usize,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    /// Fraction of iterations run with unit step size.
    #[arg(long)]
    burnin: Option<f64>,
    #[arg(long, value_enum, default_value_t = Indicator::Soft)]
    indicator: Indicator,
    #[arg(long)]
    seed: u64,
}

impl RunArgs {
    fn settings(&self) -> FitSettings {
        FitSettings { sources: self.sources, iterations: self.iters, burn_in: self.burnin, indicator: self.indicator.into(), seed: self.seed }
    }
}

fn default_workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { scenario, patients, noise, fixed_effects, seed, out } => cmd_simulate(&SimulateArgs { scenario, patients, noise, fixed_effects, seed, out }),
        Command::Fit { data, clusters, run, out, trace } => cmd_fit(&FitArgs { data, clusters, settings: run.settings(), out, trace }).map(drop),
        Command::Personalize { model, data, seed, out } => cmd_personalize(&PersonalizeArgs { model, data, seed, out }),
        Command::ClassifyPosthoc { data, clusters, run, out } => cmd_classify_posthoc(&PosthocArgs { data, clusters, settings: run.settings(), out }),
        Command::Evaluate { truth, pred, scenario, replicates, patients, iters, burnin, indicator, seed, workers, out } => {
            let args = match (truth, pred, scenario) {
                (Some(truth), Some(pred), _) => EvaluateArgs::Files { truth, pred, out },
                (_, _, Some(name)) => {
                    let mut scenario = scenario_preset(&name)?;
                    scenario.n_patients = patients;
                    scenario.seed = seed.ok_or_else(|| CliError::Input("--seed is required for a study".into()))?;
                    let settings = FitSettings { sources: scenario.n_sources, iterations: iters, burn_in: burnin, indicator: indicator.into(), seed: scenario.seed };
                    let fit = settings.config(scenario.n_clusters());
                    EvaluateArgs::Study { study: StudyConfig { scenario, n_replicates: replicates, fit, workers: default_workers(workers) }, out }
                }
                _ => return Err(CliError::Input("evaluate needs --truth and --pred, or --scenario".into())),
            };
            cmd_evaluate(&args)
        }
        Command::Select { data, clusters, run, workers, out } => cmd_select(&SelectArgs { data, candidates: clusters, settings: run.settings(), workers: default_workers(workers), out }).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIXCOURSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
