use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use asinfer::partition::Selector;
use asinfer_cli::{parse_config, Pipeline, Stage};
use clap::Parser;

/// Active-subspace inference experiments on a toy sequence VAE.
#[derive(Parser, Debug)]
#[command(name = "asinfer", version)]
struct Args {
    /// TOML run config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gen-data, pretrain, build-as, fit-vi, draw-ensemble, eval-nll, eval-diversity or run.
    #[arg(long, default_value = "run")]
    stage: Stage,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replaces every seed in the config with values derived from this one.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Restricts per-selector stages to one selector.
    #[arg(long)]
    selector: Option<Selector>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn run(args: Args) -> Result<()> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.to_string_lossy().into_owned();
    }
    if let Some(seed) = args.seed_override {
        cfg.override_seeds(seed);
    }
    if args.print_config {
        print!("{cfg}");
        return Ok(());
    }
    let mut pipeline = Pipeline::new(cfg);
    if let Some(s) = args.selector {
        pipeline = pipeline.only(s)?;
    }
    pipeline.run_stage(args.stage)?;
    if matches!(args.stage, Stage::Run | Stage::EvalDiversity) {
        let csv = pipeline.dir().join("report.csv");
        if csv.exists() {
            print!("{}", std::fs::read_to_string(csv)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
