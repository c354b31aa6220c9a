//! `adace`: estimation, simulation studies and oracle truths from the
//! command line. Every run writes its tables plus a `manifest.json` that
//! `--from-manifest` replays.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use commands::{EstimateArgs, OracleArgs, SimulateArgs};

#[derive(Parser, Debug)]
#[command(name = "adace", version, about = "Adherer-stratum treatment effects by multiple imputation", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Replay the run recorded in a manifest.
    #[arg(long, value_name = "MANIFEST")]
    from_manifest: Option<PathBuf>,

    /// Output directory [default: current directory, or the manifest's on replay].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, env = "ADACE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Estimate stratum means from a trial CSV.
    Estimate(EstimateArgs),
    /// Run a replication study on simulated trials.
    Simulate(SimulateArgs),
    /// Monte Carlo truth of the stratum means under a setting.
    Oracle(OracleArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (command, snapshot, out) = match (cli.command, cli.from_manifest) {
        (Some(c), None) => (c, None, cli.out.unwrap_or_else(|| PathBuf::from("."))),
        (None, Some(path)) => {
            let m = manifest::RunManifest::load(&path)?;
            let out = cli.out.unwrap_or(m.out_dir.clone());
            (m.arguments, m.config, out)
        }
        _ => anyhow::bail!("a subcommand or --from-manifest is required (see --help)"),
    };
    match command {
        Command::Estimate(a) => commands::estimate(a, &out),
        Command::Simulate(a) => commands::simulate(a, snapshot, &out),
        Command::Oracle(a) => commands::oracle(a, snapshot, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
