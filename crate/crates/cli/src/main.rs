//! `hazardfit`: fit, cross-validate, and compare old-age mortality hazards.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hazardfit", version, about = "Fit and compare parametric old-age mortality hazards")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "HAZARDFIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit models to one cohort and compare them.
    Fit(FitArgs),
    /// K-fold cross-validation on one cohort.
    Cv(CvArgs),
    /// Multi-cohort studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Draw a synthetic cohort from a fitted or hand-picked model.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug)]
pub enum StudyCommand {
    /// Fit every model to every cohort CSV in a directory.
    Batch(BatchArgs),
    /// Refit thinned copies of one cohort.
    Downsample(DownsampleArgs),
    /// Cluster models by their ΔAIC across cohorts.
    Cluster(ClusterArgs),
    /// Good/bad support fractions from a batch table.
    Summary(SummaryArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model to fit; repeatable.
    #[arg(long = "model", value_name = "NAME")]
    pub model: Vec<String>,
    /// Comma-separated model list, or `all`.
    #[arg(long, value_name = "LIST")]
    pub models: Option<String>,
    /// Fit all nine models (the default when no model is named).
    #[arg(long)]
    pub all_models: bool,
    /// Model to leave out; repeatable.
    #[arg(long, value_name = "NAME")]
    pub exclude: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct FitOpts {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts in addition to the heuristic start.
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Report log-likelihoods without the `ln C(N, D)` term.
    #[arg(long)]
    pub no_binomial_constant: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CohortArgs {
    /// Cohort CSV with columns age, survivors, deaths.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Overrides the country taken from the file name.
    #[arg(long)]
    pub country: Option<String>,
    /// Overrides the sex taken from the file name.
    #[arg(long)]
    pub sex: Option<String>,
    /// Overrides the birth cohort taken from the file name.
    #[arg(long)]
    pub cohort: Option<i32>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    /// Directory of `{country}_{sex}_{cohort}.csv` files.
    #[arg(long)]
    pub dir: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DownsampleArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.5,0.3,0.1")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "source")]
pub struct ClusterSource {
    /// Batch table (`batch.csv`) with `delta_aic` records.
    #[arg(long, group = "source")]
    pub table: Option<PathBuf>,
    /// Directory of cohort CSVs to fit first.
    #[arg(long, group = "source")]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub source: ClusterSource,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    /// Batch table (`batch.csv`).
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    /// Natural parameters as a JSON object, e.g. `{"alpha":0.06,"beta":0.1}`.
    #[arg(long)]
    pub params: String,
    /// Cohort size at the first age.
    #[arg(long)]
    pub n0: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 80)]
    pub first_age: i64,
    #[arg(long, default_value_t = 110)]
    pub last_age: i64,
    #[arg(long, default_value = "sim")]
    pub country: String,
    #[arg(long, default_value = "total")]
    pub sex: String,
    #[arg(long, default_value_t = 0)]
    pub cohort: i32,
    /// Output CSV; standard output when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli, &argv[1..]) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
