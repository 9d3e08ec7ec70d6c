use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zeno_cli::config::parse_config;
use zeno_cli::{emit_timing, run_suite, Result};
use zeno_core::timing::slope_for;

#[derive(Parser)]
#[command(name = "zeno", version, about = "Byzantine-tolerant SGD experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep combination and repeat, writing CSV traces and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config and $ZENO_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; overrides the config. Repeat r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Measure aggregation wall-clock time against the number of workers.
    Timing {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            quiet,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out_dir = cfg.resolve_output_dir(out.as_deref());
            let combos = cfg.combinations().len();
            if !quiet {
                eprintln!(
                    "running {combos} combination(s) x {} repeat(s), T = {}, into {}",
                    cfg.repeats,
                    cfg.iterations,
                    out_dir.display()
                );
            }
            let report = run_suite(&cfg, &out_dir)?;
            if !quiet {
                eprintln!(
                    "wrote {} trace and {} summary file(s)",
                    report.traces.len(),
                    report.summaries.len()
                );
            }
        }
        Command::Timing { config, out } => {
            let cfg = parse_config(&config)?;
            let out_dir = cfg.resolve_output_dir(out.as_deref());
            let (path, rows) = emit_timing(&cfg, &out_dir)?;
            for row in &rows {
                println!("{} m={} median {} ns", row.rule, row.workers, row.median_ns);
            }
            if cfg.timing.m.len() > 1 {
                for &rule in &cfg.timing.rules {
                    println!("{rule} log-log slope {:.3}", slope_for(&rows, rule));
                }
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            println!(
                "ok: {} combination(s), {} repeat(s), output {}",
                cfg.combinations().len(),
                cfg.repeats,
                cfg.resolve_output_dir(None).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
