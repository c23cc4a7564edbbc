use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biorec::config::ExperimentConfig;
use biorec::experiment;
use biorec::fusion::FusionMode;
use biorec::Result;

#[derive(Parser)]
#[command(name = "biorec", version, about = "Three-channel PCA + MLP image recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Root seed for splits and initialisation.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random splits.
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long, value_parser = ["sum_rule", "fpt", "fnpt"])]
    fusion: Option<String>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Descriptor settings and search space for faces or objects.
    #[arg(long, value_parser = ["faces", "objects"])]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate over random splits.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Architecture search only; writes leaderboards.
    Search {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Classify images with a saved bundle.
    Predict {
        bundle: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Summarise a finished run directory.
    Report { run_dir: PathBuf },
}

fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(n) = o.splits {
        cfg.n_splits = n;
    }
    if let Some(f) = &o.fusion {
        cfg.fusion.mode = f.parse::<FusionMode>()?;
    }
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    if let Some(p) = &o.preset {
        cfg.channels.apply_preset(p)?;
        cfg.search.preset = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let outcome = experiment::run_experiment(&cfg)?;
            print!("{}", experiment::report(&outcome.run_dir)?);
        }
        Command::Search { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let results = experiment::run_search(&cfg)?;
            for (s, per_split) in results.iter().enumerate() {
                for r in per_split {
                    println!(
                        "split {s}: best {} PCs x {} neurons, val accuracy {:.4}",
                        r.best.n_pcs, r.best.n_neurons, r.best_val_accuracy
                    );
                }
            }
            println!("leaderboards written to {}", cfg.out_dir.display());
        }
        Command::Predict { bundle, images } => {
            for p in experiment::predict(&bundle, &images)? {
                let scores: Vec<String> = p.scores.iter().map(|v| format!("{v:.6}")).collect();
                println!(
                    "{}\t{}\t{}\t{}",
                    p.path.display(),
                    p.label,
                    p.category,
                    scores.join(",")
                );
            }
        }
        Command::Report { run_dir } => print!("{}", experiment::report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
