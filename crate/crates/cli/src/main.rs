use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use narrowtube_cli::commands::{
    check_assumptions_cmd, exit_prob_cmd, exit_time_cmd, marginal_cmd, resolvent_cmd, sweep_cmd,
};
use narrowtube_cli::output::OutputDir;
use narrowtube_cli::{CliError, CommandReport, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "narrowtube", version, about = "Diffusion in narrow tubes: limit-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (INI).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides `[run] output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Cross-section assumptions along the eps sweep.
    CheckAssumptions,
    /// Right-exit probability against p+.
    ExitProb,
    /// Mean exit time against the Green-function value and theta.
    ExitTime,
    /// KS distance of X_T from the limit marginal.
    Marginal,
    /// Resolvent-identity residuals and the gluing negative control.
    Resolvent,
    /// All of the above.
    Sweep,
}

fn run(cli: &Cli) -> Result<Vec<CommandReport>, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| narrowtube_cli::config::ConfigError::Invalid("--config is required".into()))?;
    let overrides = Overrides { seed: cli.seed, workers: cli.workers, output: cli.out.clone(), env_seed: None }.from_env();
    let cfg = ExperimentConfig::load(path, &overrides)?;
    let out = OutputDir::create(&cfg.run.output, &cfg)?;
    Ok(match cli.command {
        Command::CheckAssumptions => vec![check_assumptions_cmd(&cfg, &out)?],
        Command::ExitProb => vec![exit_prob_cmd(&cfg, &out)?],
        Command::ExitTime => vec![exit_time_cmd(&cfg, &out)?],
        Command::Marginal => vec![marginal_cmd(&cfg, &out)?],
        Command::Resolvent => vec![resolvent_cmd(&cfg, &out)?],
        Command::Sweep => sweep_cmd(&cfg, &out)?,
    })
}

fn main() -> ExitCode {
    // Usage errors share the config-invalid code; 2 is reserved for
    // tolerance failures.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(reports) => {
            let mut code = 0;
            for r in &reports {
                for c in r.checks.iter().filter(|c| !c.passed) {
                    eprintln!("{}: FAIL {} (value {}, target {}, tolerance {})", r.command, c.name, c.value, c.target, c.tolerance);
                }
                println!("{}: {}", r.command, if r.passed { "pass" } else { "FAIL" });
                code = code.max(r.exit_code());
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
