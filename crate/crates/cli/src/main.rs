use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swing_core::bdpp_solver::EngineKind;
use swing_core::experiments::{
    price_scenarios, run_euler_gap, run_sweep, run_verification_suite, write_gap_csv, write_sweep_csv,
    ExperimentConfig,
};
use swing_core::SwingError;

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFICATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "swing", version, about = "Swing option valuation and verification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value each scenario at its configured forward curve.
    Price(Common),
    /// Price and delta against the initial forward level, one CSV per scenario.
    Sweep(Common),
    /// Run the verification suite; exit status 2 if a check fails.
    Verify(Common),
    /// Coupled truncated and plain Euler schemes: gap per refinement.
    EulerGap(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to `output` in the config, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    /// Run only this scenario.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Grid,
    Lsmc,
}

enum Failure {
    Error(SwingError),
    Verification,
}

impl From<SwingError> for Failure {
    fn from(e: SwingError) -> Self {
        Failure::Error(e)
    }
}

fn load(args: &Common) -> Result<ExperimentConfig, SwingError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(name) = &args.scenario {
        cfg.restrict_to(name)?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(engine) = args.engine {
        cfg.set_engine(match engine {
            Engine::Grid => EngineKind::Grid,
            Engine::Lsmc => EngineKind::Lsmc,
        })?;
    }
    Ok(cfg)
}

fn out_dir(args: &Common, cfg: &ExperimentConfig) -> PathBuf {
    args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Price(args) => {
            let cfg = load(&args)?;
            for (name, r) in price_scenarios(&cfg)? {
                println!("scenario {name}");
                println!("  price        = {:.6} (std err {:.2e})", r.price, r.std_error);
                match r.delta {
                    Some(d) => println!("  delta        = {d:.6} (std err {:.2e})", r.delta_std_error),
                    None => println!("  delta        = n/a"),
                }
                println!("  mean volume  = {:.4}", r.policy_summary.mean_volume);
                for d in &r.diagnostics {
                    println!("  note: {d}");
                }
            }
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let dir = out_dir(&args, &cfg);
            for curve in run_sweep(&cfg)? {
                let path = write_sweep_csv(&curve, &dir)?;
                println!("{} rows -> {}", curve.rows.len(), path.display());
                for d in &curve.diagnostics {
                    println!("  note ({}): {d}", curve.scenario);
                }
            }
        }
        Command::Verify(args) => {
            let cfg = load(&args)?;
            let report = run_verification_suite(&cfg)?;
            println!("{report}");
            if !report.passed() {
                for c in report.failures() {
                    eprintln!("failed: {}", c.name);
                }
                return Err(Failure::Verification);
            }
        }
        Command::EulerGap(args) => {
            let cfg = load(&args)?;
            let report = run_euler_gap(&cfg)?;
            println!("{:>4} {:>10} {:>14} {:>14} {:>12}", "m", "s_h", "sup_gap", "max_ratio", "cut_rate");
            for r in &report.rows {
                println!(
                    "{:>4} {:>10.4} {:>14.6e} {:>14.6e} {:>12.3e}",
                    r.m, r.threshold, r.sup_gap, r.max_ratio, r.truncation_rate
                );
            }
            println!("strictly decreasing: {}", report.strictly_decreasing);
            if args.out.is_some() || cfg.output.is_some() {
                let path = write_gap_csv(&report, &out_dir(&args, &cfg))?;
                println!("-> {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(EXIT_VERIFICATION),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            let code = if e.is_config() || matches!(e, SwingError::Io(_)) { EXIT_CONFIG } else { EXIT_NUMERICAL };
            ExitCode::from(code)
        }
    }
}
