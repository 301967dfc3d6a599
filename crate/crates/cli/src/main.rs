use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lcsim_cli::commands::{self, CliError, CommandKind, Overrides};

/// Simulate latency-critical workloads and reproduce characterization studies.
///
/// Outputs go to `<out>/<spec name>/<command>/`. The output root defaults to
/// $LCSIM_OUT, or `./lcsim-out` when unset.
#[derive(Parser)]
#[command(name = "lcsim", version)]
struct Cli {
    /// Replace the spec's seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of load levels per sweep.
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Warmup seconds discarded from every run.
    #[arg(long, global = true)]
    warmup: Option<f64>,
    /// Worker threads for concurrent sweep points.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep load for one topology and limit set; derive LQoS and saturation.
    Sweep { spec: PathBuf },
    /// Run all three topologies and emit the six-panel bundle and category.
    Characterize { spec: PathBuf },
    /// LLC-way and/or memory-bandwidth partitioning study.
    Partition { spec: PathBuf },
    /// Classify the workload from its single-thread characterization.
    Classify { spec: PathBuf },
    /// Fit profile parameters to the spec's `target_*` keys.
    Calibrate { spec: PathBuf },
    /// Re-run a previous command from its manifest.json.
    Replay { manifest: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.parallelism {
        if n == 0 {
            eprintln!("error: --parallelism must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let ov = Overrides {
        seeds: cli.seed.map(|s| vec![s]),
        points: cli.points,
        warmup: cli.warmup,
        out_root: cli.out,
        out_dir: None,
    };
    let result = match &cli.command {
        Cmd::Sweep { spec } => commands::run(CommandKind::Sweep, spec, &ov),
        Cmd::Characterize { spec } => commands::run(CommandKind::Characterize, spec, &ov),
        Cmd::Partition { spec } => commands::run(CommandKind::Partition, spec, &ov),
        Cmd::Classify { spec } => commands::run(CommandKind::Classify, spec, &ov),
        Cmd::Calibrate { spec } => commands::run(CommandKind::Calibrate, spec, &ov),
        Cmd::Replay { manifest } => commands::replay(manifest, &ov),
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("wrote {}", outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {}", e.message());
    ExitCode::from(e.exit_code() as u8)
}
