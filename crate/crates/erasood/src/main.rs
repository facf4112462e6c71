use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erasood::{commands, Error, Result, RunConfig};

/// Erasure-based group out-of-distribution detection.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// key = value configuration file
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `out`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network on `dataset`
    Train,
    /// Score every image of `dataset`
    Score {
        /// Use the histogram entropy estimate instead of a checkpoint
        #[arg(long)]
        oracle: bool,
    },
    /// Group detection from three score CSVs
    Detect,
    /// Histogram conditional entropy per image
    Entropy,
    /// Mean per-pixel likelihood map
    Heatmap,
    /// Export uncertainty-space features
    Features,
    /// Write `dataset` as an IMGB file
    Synth,
    /// Print every configuration key with its current value
    Config,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let out = cfg.out.display();
    match cli.command {
        Command::Train => {
            let t = commands::train(&cfg)?;
            let last = t.history.last().map(|e| e.losses);
            eprintln!(
                "trained {} epochs{}; final loss {:?}; wrote {out}/{}",
                t.history.len(),
                if t.stopped_early { " (early stop)" } else { "" },
                last,
                commands::CHECKPOINT_FILE
            );
        }
        Command::Score { oracle } => {
            let s = commands::score(&cfg, oracle)?;
            eprintln!("{} scores, mean {:.4}; wrote {out}/{}", s.len(), mean(&s), commands::SCORES_FILE);
        }
        Command::Detect => {
            let r = commands::detect(&cfg)?;
            println!(
                "AUROC {:.4} ± {:.4}  AUPR {:.4} ± {:.4}  FPR@95TPR {:.4} ± {:.4}",
                r.auroc.mean, r.auroc.std, r.aupr.mean, r.aupr.std, r.fpr95.mean, r.fpr95.std
            );
        }
        Command::Entropy => {
            let s = commands::entropy(&cfg)?;
            eprintln!("{} estimates, mean {:.4} bits; wrote {out}/{}", s.len(), mean(&s), commands::ENTROPY_FILE);
        }
        Command::Heatmap => {
            commands::heatmap(&cfg)?;
            eprintln!("wrote {out}/{} and {out}/{}", commands::HEATMAP_FILE, commands::HEATMAP_CSV_FILE);
        }
        Command::Features => {
            let f = commands::features(&cfg)?;
            eprintln!("{} feature rows; wrote {out}/{}", f.len(), commands::FEATURES_FILE);
        }
        Command::Synth => {
            let d = commands::synth(&cfg)?;
            eprintln!("{} images ({}); wrote {out}/{}", d.len(), d.provenance, commands::DATASET_FILE);
        }
        Command::Config => print!("{}", cfg.template()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
