use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use terrazmp_cli::{run, Loaded, Overrides};

/// Plans manipulation and relocation motions described by a scenario file.
#[derive(Debug, Parser)]
#[command(name = "plan", version)]
struct Args {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the scenario's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo samples per attitude.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    no_smooth: bool,
    #[arg(long)]
    no_traction_opt: bool,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let loaded = match Loaded::from_file(&args.scenario) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {e}", args.scenario.display());
            return ExitCode::from(1);
        }
    };
    let ov = Overrides {
        seed: args.seed,
        out: args.out,
        samples: args.samples,
        no_smooth: args.no_smooth,
        no_traction_opt: args.no_traction_opt,
    };
    match run(&loaded, &ov) {
        Ok(o) => {
            println!("{}: wrote {} to {}", loaded.scenario.name, o.files.join(", "), o.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
