use adlog::commands;
use adlog::config::{ExperimentConfig, Profile, ResolvedConfig};
use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// IoT trace simulation, sequence-model training, and collaborating-node
/// detection pipeline.
#[derive(Parser)]
#[command(name = "adlog", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter profile overriding the config's `profile` key.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and write clean/attack trace files plus the
    /// ground-truth sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Parse trace files into a sequence corpus.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Trace files to ingest (comma-separated or repeated).
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Import the vocabulary from an existing corpus instead of building
        /// it from the inputs.
        #[arg(long)]
        vocab_from: Option<PathBuf>,
        /// Basename of the corpus artifact.
        #[arg(long, default_value = "corpus")]
        name: String,
    },
    /// Train the model on a corpus and write a checkpoint plus the loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Continue training from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Basename of the checkpoint artifact.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Score a checkpoint on its held-out test pairs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Basename of the evaluation artifacts.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Compare attack and clean models and report flagged node pairs.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        attack_checkpoint: PathBuf,
        #[arg(long)]
        clean_checkpoint: PathBuf,
        #[arg(long)]
        attack_corpus: PathBuf,
        #[arg(long)]
        clean_corpus: PathBuf,
        /// Ground-truth sidecar written by `simulate`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Size of set A (defaults to the configured k).
        #[arg(long)]
        k: Option<usize>,
    },
}

fn resolve(common: &Common) -> Result<(ResolvedConfig, PathBuf, u64)> {
    let config = ExperimentConfig::load(&common.config)?.resolve(common.profile)?;
    let out_dir = common.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let seed = common.seed.unwrap_or(config.seeds[0]);
    Ok((config, out_dir, seed))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common } => {
            let (config, out_dir, seed) = resolve(&common)?;
            let outcome = commands::simulate(&config, seed, &out_dir)?;
            if outcome.clean_events == 0 {
                eprintln!("warning: zero-duration scenario produced empty traces");
            }
            println!(
                "wrote {} ({} events)",
                outcome.clean_path.display(),
                outcome.clean_events
            );
            if let Some(path) = &outcome.attack_path {
                println!("wrote {} ({} events)", path.display(), outcome.attack_events);
            }
            println!("wrote {}", outcome.sidecar_path.display());
        }
        Command::Prepare { common, inputs, vocab_from, name } => {
            let (config, out_dir, _) = resolve(&common)?;
            let outcome =
                commands::prepare(&config, &inputs, vocab_from.as_deref(), &name, &out_dir)?;
            println!("vocabulary size: {}", outcome.vocab_size);
            println!("sequence pairs: {}", outcome.pair_count);
            println!("wrote {}", outcome.corpus_path.display());
        }
        Command::Train { common, corpus, resume, name } => {
            let (config, out_dir, seed) = resolve(&common)?;
            let outcome =
                commands::train(&config, &corpus, seed, resume.as_deref(), &name, &out_dir)?;
            println!(
                "trained {} iterations on {} pairs ({} held out), seed {}",
                outcome.iterations, outcome.train_pairs, outcome.test_pairs, seed
            );
            if let (Some(first), Some(last)) = (outcome.initial_loss, outcome.final_loss) {
                println!("mean NLL: {first:.4} -> {last:.4}");
            }
            if outcome.clip_events > 0 {
                println!("gradient clipped on {} iterations", outcome.clip_events);
            }
            println!("wrote {}", outcome.checkpoint_path.display());
            println!("wrote {}", outcome.loss_csv_path.display());
        }
        Command::Evaluate { common, checkpoint, corpus, name } => {
            let (config, out_dir, _) = resolve(&common)?;
            let outcome = commands::evaluate(&config, &checkpoint, &corpus, &name, &out_dir)?;
            println!(
                "accuracy: {:.2} over {} test pairs",
                outcome.accuracy, outcome.test_pairs
            );
            println!("wrote {}", outcome.bleu_csv_path.display());
        }
        Command::Detect {
            common,
            attack_checkpoint,
            clean_checkpoint,
            attack_corpus,
            clean_corpus,
            sidecar,
            k,
        } => {
            let (config, out_dir, _) = resolve(&common)?;
            let outcome = commands::detect(
                &config,
                &attack_checkpoint,
                &clean_checkpoint,
                &attack_corpus,
                &clean_corpus,
                sidecar.as_deref(),
                k,
                &out_dir,
            )?;
            print!("{}", outcome.report.to_text());
            println!("wrote {}", outcome.text_path.display());
            println!("wrote {}", outcome.json_path.display());
        }
    }
    Ok(())
}
