use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use liouville::cli::{parse_config, run, CliError, Command, RunOptions};

/// Mean-field solver and blow-up diagnostics for prescribed curvature problems.
#[derive(Parser)]
#[command(name = "liouville", version)]
struct Args {
    /// info, solve, sweep, bubbles, limit or probe
    subcommand: String,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Worker threads; LIOUVILLE_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("LIOUVILLE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Semantic(format!("LIOUVILLE_THREADS = `{v}` is not a thread count"))),
        Err(_) => Ok(flag),
    }
}

fn main_inner(args: Args) -> Result<i32, CliError> {
    if let Some(n) = thread_count(args.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Semantic(e.to_string()))?;
    }
    let cmd: Command = args.subcommand.parse()?;
    let cfg = parse_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| cfg.output.clone());
    let outcome = run(cmd, &cfg, &RunOptions { out, seed: args.seed })?;
    for line in outcome.stdout {
        println!("{line}");
    }
    Ok(outcome.code)
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
