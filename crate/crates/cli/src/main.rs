use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pcrtbp_eco_cli::commands;
use pcrtbp_eco_cli::config::RunConfig;
use pcrtbp_eco_cli::output::RunDir;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pcrtbp-eco", version, about = "Ejection-collision orbits of the planar circular restricted three-body problem")]
struct Cli {
    /// TOML configuration file; defaults are used for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `out/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Scan and certify the Melnikov function of the infinity manifolds and S+.
    MelnikovScan,
    /// Compare the manifold distance with its first-order Melnikov prediction.
    Distance,
    /// Find ejection-collision orbits with growing excursions.
    Eco,
    /// Locate the energy of the triple intersection.
    Triple,
    /// Check the transition map through the collision neighborhood.
    Localmap,
    /// Integrate one orbit with conservation, reversibility and chart round-trip checks.
    Integrate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::MelnikovScan => "melnikov-scan",
            Command::Distance => "distance",
            Command::Eco => "eco",
            Command::Triple => "triple",
            Command::Localmap => "localmap",
            Command::Integrate => "integrate",
        }
    }
}

fn setup(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(cfg)
}

fn run(command: Command, cfg: &RunConfig, out: &mut RunDir) -> Result<serde_json::Value> {
    match command {
        Command::MelnikovScan => commands::melnikov_scan(cfg, out),
        Command::Distance => commands::distance_table(cfg, out),
        Command::Eco => commands::eco(cfg, out),
        Command::Triple => commands::triple(cfg, out),
        Command::Localmap => commands::localmap(cfg, out),
        Command::Integrate => commands::integrate_orbit(cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let cfg = match setup(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let mut out = match RunDir::create(&root) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &cfg, &mut out) {
        Ok(summary) => {
            if let Err(e) = out.finish(name, &cfg) {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let _ = out.write_json("error.json", &json!({ "command": name, "error": format!("{e:#}") }));
            ExitCode::from(1)
        }
    }
}
