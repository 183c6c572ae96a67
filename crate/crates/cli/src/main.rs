use anyhow::Result;
use clap::{Parser, Subcommand};
use fedser_cli::config::ExperimentConfig;
use fedser_cli::{demo, runner};
use std::path::PathBuf;

/// Federated speech emotion recognition experiments: adversarial training
/// against white-box attacks with an inference-time randomisation defence.
///
/// Worker thread count follows RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "fedser", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the synthetic-corpus client count.
        #[arg(long)]
        clients: Option<usize>,
        /// Override the number of federated rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a run log CSV as an SVG line chart of UAR vs round.
    Chart {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Visualise the configured attack on one test sample.
    AttackDemo {
        #[arg(long)]
        config: PathBuf,
        /// Trained checkpoint to attack (round_<t>.ckpt from a run).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; defaults to <output_dir>/attack_demo.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, seed, clients, rounds } => {
            let mut config = ExperimentConfig::load(&config)?;
            config.apply_overrides(out, seed, clients, rounds)?;
            let output = runner::run_experiment(&config)?;
            for record in &output.records {
                println!("{}", record.to_csv_row());
            }
            println!("wrote {}", config.output_dir.display());
        }
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?;
            println!("ok");
        }
        Command::Chart { log, out } => {
            runner::chart(&log, &out)?;
            println!("wrote {}", out.display());
        }
        Command::AttackDemo { config, checkpoint, out } => {
            let config = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output_dir.join("attack_demo"));
            let report = demo::attack_demo(&config, &checkpoint, &out)?;
            print!("{report}");
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
