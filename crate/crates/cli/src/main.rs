use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use podscale_cli::{load_config, run_experiment, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "podscale", version, about = "Run desk-scale pod training experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment config.
    Run {
        config: PathBuf,
        /// Report directory; defaults to the config's `output`, then `out/<config name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for independent seeds.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace the config's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Also export per-eval metrics as CSV.
        #[arg(long)]
        csv: bool,
    },
}

fn run(config: &Path, out: Option<PathBuf>, jobs: usize, seed_override: Option<u64>, csv: bool) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::config("--jobs", "must be at least 1"));
    }
    let mut cfg = load_config(config)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| {
        let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        Path::new("out").join(stem)
    });
    let config_dir = config.parent().unwrap_or(Path::new("."));
    let outcome = run_experiment(&cfg, config_dir, &out, &RunOptions { jobs, csv })?;
    for line in &outcome.lines {
        println!("{line}");
    }
    println!("{} reports written to {}", outcome.kind, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, out, jobs, seed_override, csv } = cli.command;
    match run(&config, out, jobs, seed_override, csv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
