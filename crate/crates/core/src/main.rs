use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use icefield::io::{execute, verify, RunConfig};
use icefield::Error;

/// Latent Gaussian models for glaciological source separation.
///
/// Exit codes: 0 success, 2 configuration or input error, 3 numerical
/// failure, 4 I/O failure.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, required_unless_present = "verify")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory; overrides `paths.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check an output directory against its manifest instead of running.
    #[arg(long, conflicts_with_all = ["config", "seed", "out"])]
    verify: Option<PathBuf>,
    /// Print the resolved config with defaults and exit.
    #[arg(long)]
    dump_config: bool,
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(dir) = cli.verify {
        let problems = verify(&dir)?;
        if problems.is_empty() {
            println!("{}: all artifacts match the manifest", dir.display());
            return Ok(());
        }
        return Err(Error::InvalidInput(format!("{}:\n  {}", dir.display(), problems.join("\n  "))));
    }
    let path = cli.config.expect("clap requires --config");
    let cfg = RunConfig::load(&path, cli.seed)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let out = cli
        .out
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Error::Config(vec!["no output directory: pass --out or set paths.output".into()]))?;
    let manifest = execute(&cfg, &out, cli.threads)?;
    println!(
        "{} run finished in {:.1} s: {} files in {}",
        manifest.mode,
        manifest.wall_time_s,
        manifest.files.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
