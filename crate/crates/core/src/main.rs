use std::path::PathBuf;
use std::process::ExitCode;

use acr_core::harness::{emit_csv, run_experiment, summarize_reports, CsvMeta, ScenarioConfig};
use acr_core::ProtocolKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acr-sim", version, about = "VANET clustering and routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repetitions and write a summary CSV.
    Run {
        /// Scenario file of `key = value` lines.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// acr, aodv, dsdv or all.
        #[arg(long, default_value = "all")]
        protocol: String,
        /// paper or small; the base that the scenario file overrides.
        #[arg(long, default_value = "small")]
        preset: String,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn build_config(scenario: Option<PathBuf>, protocol: &str, preset: &str, seed: Option<u64>, reps: Option<usize>) -> Result<ScenarioConfig, String> {
    let mut config = ScenarioConfig::preset(preset).map_err(|e| e.to_string())?;
    if let Some(path) = scenario {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        config = ScenarioConfig::parse(&text, config).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if protocol != "all" {
        config.protocols = vec![ProtocolKind::parse(protocol).ok_or_else(|| format!("unknown protocol {protocol:?}"))?];
    }
    if let Some(s) = seed {
        config.base_seed = s;
    }
    if let Some(r) = reps {
        config.repetitions = r;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    let Command::Run { scenario, protocol, preset, out, seed, reps } = Cli::parse().command;
    let config = match build_config(scenario, &protocol, &preset, seed, reps) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let reports = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("simulation error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let meta = CsvMeta { config_hash: config.hash(), base_seed: config.base_seed };
    let text = match emit_csv(&meta, &summarize_reports(&reports)) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("csv error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let written = match out {
        Some(path) => std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("write error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
