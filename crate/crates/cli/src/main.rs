use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phobs_cli::commands::{
    cmd_domain, cmd_report, cmd_simulate, cmd_synthesize, cmd_verify, CliError, Context, Overrides,
};
use phobs_cli::config::ModeConfig;

#[derive(Parser)]
#[command(
    name = "phobs",
    version,
    about = "Polytopic observer synthesis and simulation for port-Hamiltonian plants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Decay rate in 1/s used for every selected design.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Restrict to designs of one gain structure.
    #[arg(long, global = true)]
    mode: Option<Mode>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Resolve the operating domain and scheduling-parameter bounds.
    Domain,
    /// Solve the observer LMIs for each design.
    Synthesize,
    /// Simulate plant and observers for each scenario.
    Simulate,
    /// Re-check certificates, embedding identities and error bounds.
    Verify,
    /// Collect existing results into report.md.
    Report,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Const,
    Sched,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let Some(config) = cli.config else {
        return Err(phobs_cli::config::ConfigError::Invalid("--config <file> is required".into()).into());
    };
    let overrides = Overrides {
        out: cli.out,
        lambda: cli.lambda,
        mode: cli.mode.map(|m| match m {
            Mode::Const => ModeConfig::Const,
            Mode::Sched => ModeConfig::Sched,
        }),
    };
    let ctx = Context::load(&config, overrides)?;
    match cli.command {
        Command::Domain => cmd_domain(&ctx),
        Command::Synthesize => cmd_synthesize(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Verify => cmd_verify(&ctx),
        Command::Report => cmd_report(&ctx),
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("PHOBS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("PHOBS_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("PHOBS_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(4);
    }
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
