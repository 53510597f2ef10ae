use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safecharge::checks::{gp_oracle_suite, mlp_gradient_suite, CheckReport};
use safecharge::harness::{describe, train, write_logs, Mode, RunCheckpoint};
use safecharge::protocols::{evaluate, evaluate_cccv};
use safecharge::safety::StaticSafety;
use safecharge::td3::Td3Agent;
use safecharge::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "safecharge", version, about = "Safe TD3 fast charging with GP safety layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write per-episode logs and a checkpoint.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a trained policy greedily.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the CCCV protocol for the configured number of episodes.
    BaselineCccv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// GP oracle-equivalence and network gradient checks.
    GpCheck {
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { mode, config, out } => {
            let cfg = load_config(&config)?;
            create_dir(&out)?;
            let result = train(&cfg, mode, None)?;
            write_logs(&out, &result.logs)?;
            RunCheckpoint::from_output(&cfg, &result).save(&out.join("checkpoint.json"))?;
            println!("train mode={} {}", mode.name(), describe(&result.logs));
        }
        Command::Evaluate { checkpoint, config, episodes, out } => {
            let cfg = load_config(&config)?;
            let ck = RunCheckpoint::load(&checkpoint).map_err(|e| Failure::Usage(e.to_string()))?;
            if episodes == 0 {
                return Err(Failure::Usage("--episodes must be at least 1".into()));
            }
            let agent = Td3Agent::from_checkpoint(&ck.agent)?;
            let safety = ck.safety.as_ref().map(StaticSafety::from_snapshot).transpose()?;
            create_dir(&out)?;
            let logs = evaluate(&cfg, &mut |s| agent.policy(s), safety.as_ref(), episodes)?;
            write_logs(&out, &logs)?;
            println!("evaluate mode={} {}", ck.mode.name(), describe(&logs));
        }
        Command::BaselineCccv { config, out } => {
            let cfg = load_config(&config)?;
            create_dir(&out)?;
            let logs = evaluate_cccv(&cfg, cfg.episodes)?;
            write_logs(&out, &logs)?;
            fs::write(out.join("cccv.json"), serde_json::to_string_pretty(&cfg.cccv).map_err(Error::from)?)
                .map_err(|e| Error::io(out.join("cccv.json"), e))?;
            println!("baseline-cccv {}", describe(&logs));
        }
        Command::GpCheck { out } => {
            create_dir(&out)?;
            let reports = [gp_oracle_suite(0, 50), mlp_gradient_suite(0)];
            write_reports(&out.join("gp_check.csv"), &reports)?;
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed) {
                return Err(Failure::Runtime("gp-check: some suites failed".into()));
            }
        }
    }
    Ok(())
}

fn write_reports(path: &Path, reports: &[CheckReport]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["suite", "passed", "cases", "max_error", "tolerance", "seconds"]).map_err(Error::from)?;
    for r in reports {
        w.write_record([
            r.name.to_string(),
            r.passed.to_string(),
            r.cases.to_string(),
            format!("{:e}", r.max_error),
            format!("{:e}", r.tolerance),
            format!("{:.3}", r.elapsed.as_secs_f64()),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
