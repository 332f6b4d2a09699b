//! Implementations behind the `adlog` subcommands. Each command reads and
//! writes files under an output directory, hands artifacts to the next stage
//! by path, and writes a run manifest beside its outputs.

use crate::config::{GroundTruth, ResolvedConfig};
use crate::manifest::write_manifest;
use crate::util::write_atomic;
use adlog_core::eval::{accuracy, compare_models, DetectionReport, EvalInputs};
use adlog_core::ingest::{
    build_corpus, parse_trace, split_train_test, Corpus, IngestOptions, SequencePair,
};
use adlog_core::model::{
    load_checkpoint, resume, save_checkpoint, train as train_model, Checkpoint, TrainConfig,
};
use adlog_core::sim::{build_topology, simulate as run_simulation, write_trace};
use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

pub struct SimulateOutcome {
    pub clean_path: PathBuf,
    pub attack_path: Option<PathBuf>,
    pub sidecar_path: PathBuf,
    pub clean_events: usize,
    pub attack_events: usize,
}

/// Simulates the scenario twice — without and (when a hidden pair is
/// configured) with the hidden channel — and writes the ground-truth sidecar.
pub fn simulate(config: &ResolvedConfig, seed: u64, out_dir: &Path) -> Result<SimulateOutcome> {
    let scenario = &config.scenario;
    let duration = scenario.duration;

    let clean_topology = build_topology(&scenario.without_hidden())?;
    let clean_log = run_simulation(&clean_topology, seed, duration)?;
    let clean_path = out_dir.join("trace_clean.tr");
    let mut bytes = Vec::new();
    write_trace(&clean_log, &mut bytes)?;
    write_atomic(&clean_path, &bytes)?;

    let mut attack_path = None;
    let mut attack_events = 0;
    let mut hidden_pair = None;
    if scenario.hidden.is_some() {
        let attack_topology = build_topology(scenario)?;
        let attack_log = run_simulation(&attack_topology, seed, duration)?;
        attack_events = attack_log.events.len();
        hidden_pair = attack_log.ground_truth.as_ref().map(|h| (h.pair.0 .0, h.pair.1 .0));
        let path = out_dir.join("trace_attack.tr");
        let mut bytes = Vec::new();
        write_trace(&attack_log, &mut bytes)?;
        write_atomic(&path, &bytes)?;
        attack_path = Some(path);
    }

    let sidecar = GroundTruth {
        attack_present: hidden_pair.is_some(),
        hidden_pair,
        gateways: clean_topology.gateways.clone(),
    };
    let sidecar_path = out_dir.join("ground_truth.toml");
    write_atomic(&sidecar_path, toml::to_string_pretty(&sidecar)?.as_bytes())?;
    write_manifest(out_dir, "simulate", "simulate", Some(seed), &[], config)?;

    Ok(SimulateOutcome {
        clean_path,
        attack_path,
        sidecar_path,
        clean_events: clean_log.events.len(),
        attack_events,
    })
}

pub struct PrepareOutcome {
    pub corpus_path: PathBuf,
    pub vocab_size: usize,
    pub pair_count: usize,
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    Corpus::load(&mut BufReader::new(file))
        .with_context(|| format!("loading corpus {}", path.display()))
}

/// Parses one or more trace files into a sequence corpus. With `vocab_from`,
/// the vocabulary is imported from an existing corpus instead of built from
/// the inputs (unseen tokens map to the unknown token).
pub fn prepare(
    config: &ResolvedConfig,
    inputs: &[PathBuf],
    vocab_from: Option<&Path>,
    name: &str,
    out_dir: &Path,
) -> Result<PrepareOutcome> {
    if inputs.is_empty() {
        bail!("prepare requires at least one input trace");
    }
    let mut files = Vec::with_capacity(inputs.len());
    for input in inputs {
        let file =
            File::open(input).with_context(|| format!("opening trace {}", input.display()))?;
        let events = parse_trace(BufReader::new(file))
            .with_context(|| format!("parsing trace {}", input.display()))?;
        files.push(events);
    }
    let vocab = match vocab_from {
        Some(path) => Some(load_corpus(path)?.vocab),
        None => None,
    };
    let corpus = build_corpus(
        &files,
        &IngestOptions { max_len: config.max_len, seq_bucket: config.seq_bucket, vocab },
    );
    let corpus_path = out_dir.join(format!("{name}.corpus"));
    let mut bytes = Vec::new();
    corpus.save(&mut bytes)?;
    write_atomic(&corpus_path, &bytes)?;
    let mut manifest_inputs = inputs.to_vec();
    if let Some(path) = vocab_from {
        manifest_inputs.push(path.to_path_buf());
    }
    write_manifest(out_dir, name, "prepare", None, &manifest_inputs, config)?;
    Ok(PrepareOutcome {
        corpus_path,
        vocab_size: corpus.vocab.len(),
        pair_count: corpus.pairs.len(),
    })
}

pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub loss_csv_path: PathBuf,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub clip_events: usize,
    pub iterations: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

/// Splits the corpus, trains (or resumes) the model on the training half,
/// and writes the checkpoint plus a `iteration,mean_nll` loss CSV.
pub fn train(
    config: &ResolvedConfig,
    corpus_path: &Path,
    seed: u64,
    resume_from: Option<&Path>,
    name: &str,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let corpus = load_corpus(corpus_path)?;
    let (train_pairs, test_pairs) =
        split_train_test(&corpus.pairs, config.test_fraction, seed)?;
    if train_pairs.is_empty() {
        bail!(
            "corpus {} leaves no training pairs after the split",
            corpus_path.display()
        );
    }
    let train_config = TrainConfig { seed, ..config.train.clone() };

    let output = match resume_from {
        Some(path) => {
            let checkpoint = read_checkpoint(path)?;
            if checkpoint.vocab != corpus.vocab {
                bail!(
                    "checkpoint {} was trained with a different vocabulary than corpus {}",
                    path.display(),
                    corpus_path.display()
                );
            }
            resume(
                checkpoint.params,
                checkpoint.iterations_done as usize,
                &train_pairs,
                &train_config,
            )?
        }
        None => train_model(corpus.vocab.len(), &train_pairs, &train_config)?,
    };

    let checkpoint = Checkpoint {
        params: output.params,
        vocab: corpus.vocab,
        iterations_done: output.iterations_done as u64,
        seed,
        test_fraction: config.test_fraction,
    };
    let checkpoint_path = out_dir.join(format!("{name}.ckpt"));
    let mut bytes = Vec::new();
    save_checkpoint(&mut bytes, &checkpoint)?;
    write_atomic(&checkpoint_path, &bytes)?;

    let mut csv = String::from("iteration,mean_nll\n");
    for point in &output.history {
        let _ = writeln!(csv, "{},{}", point.iteration, point.mean_nll);
    }
    let loss_csv_path = out_dir.join(format!("{name}_loss.csv"));
    write_atomic(&loss_csv_path, csv.as_bytes())?;
    write_manifest(out_dir, name, "train", Some(seed), &[corpus_path.to_path_buf()], config)?;

    Ok(TrainOutcome {
        checkpoint_path,
        loss_csv_path,
        initial_loss: output.history.first().map(|p| p.mean_nll),
        final_loss: output.history.last().map(|p| p.mean_nll),
        clip_events: output.clip_events,
        iterations: output.iterations_done,
        train_pairs: train_pairs.len(),
        test_pairs: test_pairs.len(),
    })
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file =
        File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    load_checkpoint(&mut file)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Recomputes the test split a checkpoint was trained against.
fn test_split_for(checkpoint: &Checkpoint, corpus: &Corpus) -> Result<Vec<SequencePair>> {
    let (_, test) = split_train_test(&corpus.pairs, checkpoint.test_fraction, checkpoint.seed)?;
    Ok(test)
}

pub struct EvaluateOutcome {
    pub accuracy: f64,
    pub test_pairs: usize,
    pub bleu_csv_path: PathBuf,
}

/// Scores the checkpoint on its held-out test pairs and exports per-pair
/// BLEU-1 scores as CSV.
pub fn evaluate(
    config: &ResolvedConfig,
    checkpoint_path: &Path,
    corpus_path: &Path,
    name: &str,
    out_dir: &Path,
) -> Result<EvaluateOutcome> {
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let corpus = load_corpus(corpus_path)?;
    if checkpoint.vocab != corpus.vocab {
        bail!(
            "checkpoint {} and corpus {} have mismatched vocabularies",
            checkpoint_path.display(),
            corpus_path.display()
        );
    }
    let test = test_split_for(&checkpoint, &corpus)?;
    if test.is_empty() {
        bail!("corpus {} has no test pairs under the stored split", corpus_path.display());
    }
    let report = accuracy(&checkpoint.params, &test, corpus.max_len)?;
    let bleu_csv_path = out_dir.join(format!("{name}_bleu.csv"));
    write_atomic(&bleu_csv_path, report.to_csv().as_bytes())?;
    write_manifest(
        out_dir,
        name,
        "evaluate",
        None,
        &[checkpoint_path.to_path_buf(), corpus_path.to_path_buf()],
        config,
    )?;
    Ok(EvaluateOutcome { accuracy: report.mean(), test_pairs: test.len(), bleu_csv_path })
}

pub struct DetectOutcome {
    pub report: DetectionReport,
    pub text_path: PathBuf,
    pub json_path: PathBuf,
}

/// Compares the attack-trained and clean-trained checkpoints on their test
/// sets, builds the set-A tables, flags collaborating pairs, and checks them
/// against the ground-truth sidecar when available.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    config: &ResolvedConfig,
    attack_checkpoint_path: &Path,
    clean_checkpoint_path: &Path,
    attack_corpus_path: &Path,
    clean_corpus_path: &Path,
    sidecar_path: Option<&Path>,
    k_override: Option<usize>,
    out_dir: &Path,
) -> Result<DetectOutcome> {
    let attack_checkpoint = read_checkpoint(attack_checkpoint_path)?;
    let clean_checkpoint = read_checkpoint(clean_checkpoint_path)?;
    if attack_checkpoint.vocab != clean_checkpoint.vocab {
        bail!(
            "checkpoints {} and {} have mismatched vocabularies; prepare the clean corpus with --vocab-from the combined corpus",
            attack_checkpoint_path.display(),
            clean_checkpoint_path.display()
        );
    }
    let attack_corpus = load_corpus(attack_corpus_path)?;
    let clean_corpus = load_corpus(clean_corpus_path)?;
    for (corpus, checkpoint, path) in [
        (&attack_corpus, &attack_checkpoint, attack_corpus_path),
        (&clean_corpus, &clean_checkpoint, clean_corpus_path),
    ] {
        if corpus.vocab != checkpoint.vocab {
            bail!("corpus {} does not match its checkpoint's vocabulary", path.display());
        }
    }

    let sidecar = sidecar_path.map(GroundTruth::load).transpose()?;
    let (gateways, ground_truth_pair) = match &sidecar {
        Some(gt) => (gt.gateways.clone(), gt.hidden_pair),
        None => {
            let topology = build_topology(&config.scenario)?;
            let pair = topology.hidden.as_ref().map(|h| (h.pair.0 .0, h.pair.1 .0));
            (topology.gateways, pair)
        }
    };

    let attack_test = test_split_for(&attack_checkpoint, &attack_corpus)?;
    let clean_test = test_split_for(&clean_checkpoint, &clean_corpus)?;
    let k = k_override.unwrap_or(config.k);
    let report = compare_models(
        &EvalInputs {
            params: &attack_checkpoint.params,
            vocab: &attack_checkpoint.vocab,
            pairs: &attack_test,
            arity: attack_corpus.arity,
            max_len: attack_corpus.max_len,
        },
        &EvalInputs {
            params: &clean_checkpoint.params,
            vocab: &clean_checkpoint.vocab,
            pairs: &clean_test,
            arity: clean_corpus.arity,
            max_len: clean_corpus.max_len,
        },
        &gateways,
        k,
        ground_truth_pair,
    )?;

    let text_path = out_dir.join("report.txt");
    write_atomic(&text_path, report.to_text().as_bytes())?;
    let json_path = out_dir.join("report.json");
    write_atomic(&json_path, report.to_json().as_bytes())?;
    let mut inputs = vec![
        attack_checkpoint_path.to_path_buf(),
        clean_checkpoint_path.to_path_buf(),
        attack_corpus_path.to_path_buf(),
        clean_corpus_path.to_path_buf(),
    ];
    if let Some(path) = sidecar_path {
        inputs.push(path.to_path_buf());
    }
    write_manifest(out_dir, "detect", "detect", None, &inputs, config)?;

    Ok(DetectOutcome { report, text_path, json_path })
}
