//! `seqred`: fit mixed models by sequential reduction from the command line.
//!
//! The worker thread count follows `RAYON_NUM_THREADS`.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqred::Family;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<seqred::Error> for CliError {
    fn from(e: seqred::Error) -> Self {
        match e {
            seqred::Error::InvalidArgument(msg) => CliError::Input(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    PairwiseLogit,
    PairwiseProbit,
    MultilevelLogit,
    MultilevelProbit,
    /// Normal response with known residual sd (see --residual-sd).
    MultilevelGaussian,
}

impl ModelKind {
    pub fn is_pairwise(self) -> bool {
        matches!(self, ModelKind::PairwiseLogit | ModelKind::PairwiseProbit)
    }

    pub fn family(self, residual_sd: f64) -> Family {
        match self {
            ModelKind::PairwiseLogit | ModelKind::MultilevelLogit => Family::BernoulliLogit,
            ModelKind::PairwiseProbit | ModelKind::MultilevelProbit => Family::BernoulliProbit,
            ModelKind::MultilevelGaussian => Family::GaussianIdentity { sd: residual_sd },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PairwiseLogit => "pairwise-logit",
            ModelKind::PairwiseProbit => "pairwise-probit",
            ModelKind::MultilevelLogit => "multilevel-logit",
            ModelKind::MultilevelProbit => "multilevel-probit",
            ModelKind::MultilevelGaussian => "multilevel-gaussian",
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Contests CSV: match_id,player1,player2,winner (1 = player1 wins, 0 or 2 = player2).
    #[arg(long)]
    pub contests: Option<PathBuf>,
    /// Players CSV: player_id followed by covariate columns.
    #[arg(long)]
    pub players: Option<PathBuf>,
    /// Multilevel CSV: y, covariates..., group1, group2, ... (lowest level first).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Known residual standard deviation for multilevel-gaussian.
    #[arg(long, default_value_t = 1.0)]
    pub residual_sd: f64,
}

#[derive(Debug, Args)]
pub struct ReductionArgs {
    /// Quadrature nodes per one-dimensional integral.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(2..=256))]
    pub nodes: u32,
    /// Refuse orderings whose width exceeds this.
    #[arg(long, default_value_t = 12)]
    pub max_width: usize,
}

fn parse_level(s: &str) -> Result<usize, String> {
    let k: usize = s.trim().parse().map_err(|_| format!("{s:?} is not a level"))?;
    if k > 8 {
        return Err(format!("level {k} is outside [0, 8]"));
    }
    Ok(k)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit by maximum likelihood under the Laplace approximation and SR(k).
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        reduction: ReductionArgs,
        #[arg(long, default_value = "5", value_parser = parse_level)]
        k: usize,
        /// Skip the finite-difference standard errors.
        #[arg(long)]
        no_se: bool,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate log-likelihood approximations at fixed parameters.
    Loglik {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        reduction: ReductionArgs,
        /// Comma-separated fixed effects followed by scale parameters.
        /// Defaults to zero fixed effects and unit scales.
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        /// Comma-separated storage levels.
        #[arg(long, default_value = "5", value_delimiter = ',', value_parser = parse_level)]
        k: Vec<usize>,
        #[arg(long)]
        laplace: bool,
        /// Importance-sampling sample count.
        #[arg(long)]
        is_budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scan the first scale parameter over `from:to:count`.
        #[arg(long)]
        sigma_grid: Option<String>,
    },
    /// Dependence-graph diagnostics.
    Graph {
        #[command(flatten)]
        model: ModelArgs,
        /// Storage level used for the cost exponent.
        #[arg(long, default_value = "5", value_parser = parse_level)]
        k: usize,
    },
    /// Simulate a data set.
    Simulate(commands::SimulateArgs),
}

#[derive(Debug, Parser)]
#[command(name = "seqred", version, about = "Sequential reduction likelihoods for sparse mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            model,
            reduction,
            k,
            no_se,
            output,
        } => commands::fit(&model, &reduction, k, !no_se, output.as_deref()),
        Command::Loglik {
            model,
            reduction,
            theta,
            k,
            laplace,
            is_budget,
            seed,
            sigma_grid,
        } => commands::loglik(&commands::LoglikRequest {
            model: &model,
            reduction: &reduction,
            theta: theta.as_deref(),
            levels: &k,
            laplace,
            is_budget,
            seed,
            sigma_grid: sigma_grid.as_deref(),
        }),
        Command::Graph { model, k } => commands::graph(&model, k),
        Command::Simulate(args) => commands::simulate(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqred: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
