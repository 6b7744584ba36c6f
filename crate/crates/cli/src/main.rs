use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use edl_cli::commands::{self, Ctx, Outcome};
use edl_cli::config::{self, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "edl", version, about = "Boundary-layer expansions and radial oracles for Poisson-Boltzmann problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress to standard error.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args)]
struct Source {
    /// JSON run configuration.
    #[arg(short, long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration by name.
    #[arg(short, long)]
    preset: Option<String>,
    /// Output directory; overrides the config's `output`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Layer profiles as CSV plus metadata JSON.
    Profiles(Source),
    /// Limiting constants of the charge-conserving problem.
    Constants(Source),
    /// Expansion quantities on a stretched-distance grid, and region charges.
    Expand(Source),
    /// Radial finite-volume solves for every eps.
    Oracle(Source),
    /// Oracle-vs-expansion sweep; exit 1 if an assertion fails.
    Verify(Source),
    /// Figure presets with shape checks; exit 1 if a check fails.
    Figures {
        #[arg(short, long, default_value = "figures")]
        out: PathBuf,
    },
    /// Print a preset configuration.
    Preset { name: Option<String> },
}

fn resolve(src: &Source, verbose: u8) -> Result<(RunConfig, Ctx)> {
    let cfg = match (&src.config, &src.preset) {
        (Some(path), _) => config::load(path)?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => return Err(ConfigError("pass --config or --preset".into()).into()),
    };
    let out = src.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, Ctx { out, verbose }))
}

fn run(cli: Cli) -> Result<Outcome> {
    let v = cli.verbose;
    match cli.command {
        Command::Profiles(s) => {
            let (cfg, ctx) = resolve(&s, v)?;
            commands::profiles(&cfg, &ctx)?;
        }
        Command::Constants(s) => {
            let (cfg, ctx) = resolve(&s, v)?;
            commands::constants(&cfg, &ctx)?;
        }
        Command::Expand(s) => {
            let (cfg, ctx) = resolve(&s, v)?;
            commands::expand(&cfg, &ctx)?;
        }
        Command::Oracle(s) => {
            let (cfg, ctx) = resolve(&s, v)?;
            commands::oracle(&cfg, &ctx)?;
        }
        Command::Verify(s) => {
            let (cfg, ctx) = resolve(&s, v)?;
            return Ok(commands::verify(&cfg, &ctx)?.0);
        }
        Command::Figures { out } => return Ok(commands::figures(&Ctx { out, verbose: v })?.0),
        Command::Preset { name } => match name {
            Some(n) => println!("{}", serde_json::to_string_pretty(&config::preset(&n)?)?),
            None => config::PRESETS.iter().for_each(|p| println!("{p}")),
        },
    }
    Ok(Outcome::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            let (code, kind) = edl_cli::classify(&e);
            let body = serde_json::json!({ "error": kind, "message": format!("{e:#}"), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code as u8)
        }
    }
}
