use std::path::PathBuf;

use bsdej::cli::{run, ExitCode, Invocation};
use clap::Parser;

/// Solve and verify BSDEs with jumps from a JSON run config.
#[derive(Debug, Parser)]
#[command(name = "bsdej", version, about)]
struct Args {
    /// Run config (or a previous report, whose embedded config is rerun).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then
    /// `$BSDEJ_OUT_DIR`, then `./bsdej-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let outcome = run(&Invocation { config: args.config, seed: args.seed, out: args.out });
    if outcome.code == ExitCode::InputError {
        eprintln!("{}", outcome.message);
    } else {
        println!("{}", outcome.message);
        for f in &outcome.files {
            println!("wrote {}", f.display());
        }
    }
    std::process::exit(outcome.code.code());
}
