use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjb_core::config::Config;
use hjb_core::model::validate_assumptions;

mod bench;
mod solve;
mod verify;

/// Exit codes.
pub const OK: u8 = 0;
pub const FAILED_CHECK: u8 = 1;
pub const NOT_CONVERGED: u8 = 2;
pub const USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "hjb", version, about = "Exit-time HJB solver with Monte Carlo cross-checks")]
struct Cli {
    /// Worker threads for source assembly and Monte Carlo.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on a problem file by sampling.
    Validate(ValidateArgs),
    /// Solve the HJB equation by fixed-point iteration.
    Solve(solve::SolveArgs),
    /// Cross-check a solution directory against Monte Carlo and closed forms.
    Verify(verify::VerifyArgs),
    /// Refinement and timing table for the built-in benchmarks.
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct ValidateArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn validate(args: &ValidateArgs) -> anyhow::Result<u8> {
    let cfg = Config::load(&args.config)?;
    let spec = cfg.problem_spec()?;
    let mut opts = cfg.validation_options();
    if let Some(seed) = args.seed {
        opts.sampling.seed = seed;
    }
    let report = validate_assumptions(&spec, &opts)?;
    print!("{}", report.render());
    if report.all_passed() {
        println!("validate: PASS");
        Ok(OK)
    } else {
        println!("validate: FAIL");
        Ok(FAILED_CHECK)
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hjb_core::Error>() {
        Some(hjb_core::Error::Divergence { .. } | hjb_core::Error::Singular { .. }) => NOT_CONVERGED,
        _ => USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(USAGE);
    }
    // ignore failure: the global pool can only be set once per process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global();
    let result = match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Solve(a) => solve::run(a),
        Command::Verify(a) => verify::run(a, cli.workers),
        Command::Bench(a) => bench::run(a, cli.workers),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
