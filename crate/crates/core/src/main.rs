use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qgraph::io::{self, AnalyticSpec, Cache, Number, Reference, RunConfig, RunContext, Summary};
use qgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "qgraph", version, about = "Quantum-graph spectra and spacing statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides output.directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; repeat for several trajectories. Overrides `seeds`
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,
    /// Spectrum cache directory [default: <out>/.cache]
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Neither read nor write the spectrum cache
    #[arg(long, global = true, conflicts_with = "cache")]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Levels of the configured graph
    Spectrum,
    /// Unfolded spacings, histogram, CDF and small-spacing fit
    Spacings,
    /// KS distances and CDF deviation curves against reference laws
    Compare,
    /// Sheet counts of the secular surface and the sum rule
    Sheets,
    /// Sample an analytic spacing law
    Analytic(AnalyticArgs),
    /// First-return times of the torus flow (and 2-torus quadrature)
    Returns,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Poisson,
    Wigner,
    Integrable,
    Star2,
    Figure8,
}

#[derive(Args)]
struct AnalyticArgs {
    /// Model; without it the [analytic] block of --config is used
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Comma-separated length expressions
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<String>,
    /// "exact" or "linear" Γ for star2
    #[arg(long)]
    gamma: Option<String>,
    /// Number of sample points
    #[arg(long, default_value_t = 401)]
    points: usize,
    /// Upper end of the Δ grid [default: just past the peak or support]
    #[arg(long)]
    max_delta: Option<f64>,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    RunConfig::load(path)
}

fn context(common: &Common) -> Result<RunContext> {
    let config = load_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| config.output.directory.clone());
    let cache = if common.no_cache {
        None
    } else {
        Some(Cache::new(common.cache.clone().unwrap_or_else(|| out.join(".cache"))))
    };
    Ok(RunContext::new(config, Some(out), common.seeds.clone(), cache))
}

fn analytic(args: &AnalyticArgs, common: &Common) -> Result<Summary> {
    let (spec, out) = match args.model {
        Some(model) => {
            let model = match model {
                Model::Poisson => Reference::Poisson,
                Model::Wigner => Reference::Wigner,
                Model::Integrable => Reference::Integrable,
                Model::Star2 => Reference::Star2,
                Model::Figure8 => Reference::Figure8,
            };
            let spec = AnalyticSpec {
                model,
                lengths: args.lengths.iter().map(|s| Number::Expr(s.clone())).collect(),
                gamma: args.gamma.clone(),
                points: args.points,
                max_delta: args.max_delta,
            };
            (spec, common.out.clone().unwrap_or_else(|| PathBuf::from("out")))
        }
        None => {
            let config = load_config(common)?;
            let spec = config
                .analytic
                .clone()
                .ok_or_else(|| Error::Config("analytic: no --model given and no [analytic] block".into()))?;
            (spec, common.out.clone().unwrap_or(config.output.directory))
        }
    };
    io::cmd_analytic(&spec, &out)
}

fn run(cli: &Cli) -> Result<Summary> {
    let common = &cli.common;
    match &cli.command {
        Command::Analytic(args) => analytic(args, common),
        Command::Spectrum => io::cmd_spectrum(&context(common)?),
        Command::Spacings => io::cmd_spacings(&context(common)?),
        Command::Compare => io::cmd_compare(&context(common)?),
        Command::Sheets => io::cmd_sheets(&context(common)?),
        Command::Returns => io::cmd_returns(&context(common)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
