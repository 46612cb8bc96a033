use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oco_cli::commands::{self, CmdError, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION};
use oco_cli::config::{self, Overrides, Variant};
use oco_cli::validate;
use oco_cli::MAX_THREADS_VAR;

/// Robust OCO control: constraint checks, closed-loop runs and regret sweeps.
#[derive(Parser)]
#[command(name = "robust-oco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the additional-input variant.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions without simulating.
    Validate(Common),
    /// Simulate one closed-loop run and write trace, ledger and report.
    Run(Common),
    /// Run the regret design and fit it against path length and noise.
    RegretSweep(Common),
}

fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(MAX_THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("{MAX_THREADS_VAR} must be a positive integer, got {v:?}"))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, cmd) = match &cli.command {
        Command::Validate(c) => (c, "validate"),
        Command::Run(c) => (c, "run"),
        Command::RegretSweep(c) => (c, "regret-sweep"),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        variant: common.variant,
    };
    let cfg = match config::load(&common.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };

    if cmd == "validate" {
        let checks = match validate::run_checks(&cfg) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        };
        let passed = validate::all_passed(&checks);
        for c in &checks {
            if !common.quiet || (!passed && c.status == validate::Status::Fail) {
                println!("{c}");
            }
        }
        return ExitCode::from(if passed { EXIT_OK } else { EXIT_VIOLATION } as u8);
    }

    let result = pool.install(|| match cmd {
        "run" => commands::run(&cfg),
        _ => commands::regret_sweep(&cfg),
    });
    match result {
        Ok(report) => {
            if !common.quiet || report.code != EXIT_OK {
                println!("{}", report.summary);
            }
            ExitCode::from(report.code as u8)
        }
        Err(e @ (CmdError::Config(_) | CmdError::Runtime(_))) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
