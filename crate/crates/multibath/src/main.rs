//! Command-line front end: runs one experiment kind against a flat
//! key-value config, writing CSV outputs and a run manifest; `--check`
//! turns the acceptance invariants of that kind into the exit status.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use multibath::config::Config;
use multibath::harness::{run, sweep, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "multibath",
    about = "Two-temperature Langevin dynamics laboratory",
    version
)]
struct Cli {
    /// Experiment kind: ou-exact | simulate | stationary | lsi | envelope |
    /// spin-glass | rank-one
    kind: String,

    /// Path to the flat `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (default: out/<kind>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Verify the kind's invariants; exit nonzero on any failure.
    #[arg(long)]
    check: bool,

    /// Sweep a numeric config key: --sweep sim.lambda=10,20,40
    #[arg(long)]
    sweep: Option<String>,

    /// For `simulate`: also emit compare.csv against the exact solution.
    #[arg(long, value_name = "WHAT")]
    compare: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(cli) {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn try_main(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let kind = ExperimentKind::from_name(&cli.kind)?;
    let mut cfg = Config::from_file(&cli.config)?;
    if let Some(what) = &cli.compare {
        cfg.set("experiment.compare", what);
    }
    let out = cli
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let report = if let Some(spec) = &cli.sweep {
        sweep(kind, &cfg, spec, &out, cli.check)?
    } else {
        run(kind, &cfg, &out, cli.check)?
    };
    for path in &report.outputs {
        println!("wrote {}", path.display());
    }
    report.print_checks();
    Ok(!cli.check || report.all_passed())
}
