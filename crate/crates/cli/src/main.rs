use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use exitset_cli::{parse_config, report, run_experiment, TAGS};

/// Run one experiment of the exit-set lab and write its report.
#[derive(Debug, Parser)]
#[command(name = "exitset-lab", version)]
struct Args {
    /// Experiment tag.
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(TAGS))]
    tag: String,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's output_dir, else out/<tag>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &Args, out_dir: &std::path::Path) -> Result<bool> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_experiment(&args.tag, &config, out_dir)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let out_dir = args.out.clone().unwrap_or_else(|| {
        parse_config(&args.config)
            .ok()
            .and_then(|c| c.output_dir)
            .unwrap_or_else(|| PathBuf::from("out").join(&args.tag))
    });
    match run(&args, &out_dir) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if let Err(e) = report::write_failure(&out_dir, &args.tag, &err) {
                eprintln!("could not write failure record: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
