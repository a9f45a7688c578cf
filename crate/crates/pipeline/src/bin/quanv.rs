use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quanv_pipeline::{ExperimentConfig, Pipeline, PipelineError};

#[derive(Parser)]
#[command(name = "quanv", version, about = "Unsupervised quanvolutional feature learning pipeline")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Workspace directory, overriding the config.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    /// Derive every seed from this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and train/test split.
    Generate,
    /// Build a candidate pool and select the filter bank for one level.
    LearnFilters {
        #[arg(long)]
        level: usize,
    },
    /// Run the quanvolution hierarchy over every sample and cache features.
    Extract,
    /// Train the classifier head on cached features.
    Train,
    /// Run every stage in order.
    RunAll,
    /// Show a learned filter bank.
    InspectBank {
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(ws) = cli.workspace {
        config.workspace = ws;
    }
    if let Some(n) = cli.seed_override {
        config = config.with_seed_override(n);
    }
    let pipeline = Pipeline::new(config);
    match cli.command {
        Command::Generate => println!("{}", pipeline.generate()?),
        Command::LearnFilters { level } => println!("{}", pipeline.learn_filters(level)?),
        Command::Extract => println!("{}", pipeline.extract()?),
        Command::Train => println!("{}", pipeline.train()?),
        Command::RunAll => {
            let out = pipeline.run_all()?;
            println!("{out}");
            println!("manifest: {}", pipeline.workspace().run_manifest().display());
        }
        Command::InspectBank { level } => {
            let bank = pipeline.inspect_bank(level)?;
            println!(
                "level {}: {} filters on {} qubits, K-means objective {:.6} after {} iterations",
                bank.level,
                bank.k(),
                bank.n_qubits(),
                bank.objective,
                bank.kmeans_iterations
            );
            println!("provenance: {:?}", bank.provenance);
            for (f, idx) in bank.filters.iter().zip(&bank.selection_indices) {
                println!(
                    "  pool row {idx:>4}: {} x{} layers, {} gates, bind seed {}",
                    f.template.id.as_str(),
                    f.template.n_layers,
                    f.gates().len(),
                    f.bind_seed
                );
            }
        }
        Command::DefaultConfig => print!("{}", quanv_pipeline::stages::default_config_toml()),
    }
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
