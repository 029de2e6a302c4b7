use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psweave::cli::{self, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "psweave", version, about = "Bayesian partitioned-survival cost-utility analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Check an outcome CSV (the config's data file when no path is given).
    Validate { path: Option<PathBuf> },
    /// Derive e_pfs/e_pps from utility and survival series.
    DeriveQas,
    /// Generate and amputate a synthetic trial.
    Simulate,
    /// Fit both arms and write draw files.
    Fit,
    /// Convergence diagnostics and trace/density plots.
    Diagnose,
    /// Information-criteria comparison and predictive checks.
    Assess,
    /// ICER, cost-effectiveness plane and acceptability curve.
    Evaluate,
    /// Run the whole pipeline into one directory with an index.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecFlag {
    Original,
    Alternative,
    Custom,
}

#[derive(Args)]
struct Flags {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    warmup: Option<usize>,
    #[arg(long, global = true)]
    k: Option<f64>,
    #[arg(long = "n-mc", global = true)]
    n_mc: Option<usize>,
    #[arg(long, global = true, value_enum)]
    spec: Option<SpecFlag>,
}

fn config(flags: &Flags, required: bool) -> Result<RunConfig, CliError> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(CliError::Config("--config is required for this command".into())),
        None => RunConfig::default(),
    };
    c.apply(&Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        chains: flags.chains,
        iters: flags.iters,
        warmup: flags.warmup,
        k: flags.k,
        n_mc: flags.n_mc,
        spec: flags.spec.map(|s| match s {
            SpecFlag::Original => "original".into(),
            SpecFlag::Alternative => "alternative".into(),
            SpecFlag::Custom => "custom".into(),
        }),
    })?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let f = &cli.flags;
    match &cli.command {
        Command::Validate { path } => {
            let path = match path {
                Some(p) => p.clone(),
                None => config(f, false)?.data_path(),
            };
            let d = cli::validate(&path)?;
            println!("ok: {} records ({} arm 1, {} arm 2)", d.len(), d.arm_size(1), d.arm_size(2));
            Ok(Vec::new())
        }
        Command::DeriveQas => cli::derive_qas(&config(f, false)?),
        Command::Simulate => cli::simulate(&config(f, false)?),
        Command::Fit => cli::fit(&config(f, true)?),
        Command::Diagnose => cli::diagnose(&config(f, false)?),
        Command::Assess => cli::assess(&config(f, true)?),
        Command::Evaluate => cli::evaluate(&config(f, true)?),
        Command::Report => cli::report(&config(f, false)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
