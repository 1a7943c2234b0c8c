use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carnot::experiments::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "carnot", version, about = "Numerical experiments on Carnot groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSV.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config sample count.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the algebra axioms and BCH associativity of built-in groups.
    ValidateAlgebra(Common),
    /// Search convex-norm weights witnessing midpoint convexity.
    SearchLambda(Common),
    /// Bracket the Carnot-Carathéodory distance from below and above.
    CcDistance(Common),
    /// Build and audit a cube hierarchy on a sampled ball.
    BuildCubes(Common),
    /// Carleson packing sums of a registry map.
    Carleson(Common),
    /// Per-cube α, β and fitted approximation errors.
    CoarseDiff(Common),
    /// Markov convexity functional for a chain family.
    Markov(Common),
    /// Largest four-point constant over random quadruples.
    FourPoint(Common),
    /// Nets, Voronoi extension and distortion.
    NetDistortion(Common),
    /// Smallest distance ratio per scale.
    CollapseScan(Common),
    /// Word-metric ball sizes in the integer Heisenberg group.
    BallGrowth(Common),
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::ValidateAlgebra(c) => ("validate-algebra", c),
            Command::SearchLambda(c) => ("search-lambda", c),
            Command::CcDistance(c) => ("cc-distance", c),
            Command::BuildCubes(c) => ("build-cubes", c),
            Command::Carleson(c) => ("carleson", c),
            Command::CoarseDiff(c) => ("coarse-diff", c),
            Command::Markov(c) => ("markov", c),
            Command::FourPoint(c) => ("four-point", c),
            Command::NetDistortion(c) => ("net-distortion", c),
            Command::CollapseScan(c) => ("collapse-scan", c),
            Command::BallGrowth(c) => ("ball-growth", c),
        }
    }
}

fn run(cli: Cli) -> carnot::Result<PathBuf> {
    let (name, common) = cli.command.split();
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(name)?,
    };
    if cfg.experiment != name {
        return Err(carnot::Error::Config(format!(
            "config names experiment `{}` but the subcommand is `{name}`",
            cfg.experiment
        )));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = common.samples {
        cfg.samples = Some(samples);
    }
    run_experiment(&cfg, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
