//! Core library behind the `adlog` pipeline: a deterministic IoT network
//! trace simulator, trace-log ingestion and tokenization, a from-scratch GRU
//! encoder-decoder with additive attention trained by backpropagation, and
//! BLEU-based evaluation with collaborating-node detection.
//!
//! The crate is organized as one module per pipeline stage:
//!
//! * [`trace`] — the trace line grammar shared by the simulator (writer) and
//!   the ingest stage (parser).
//! * [`sim`] — scenario configuration, topology validation, and the
//!   deterministic packet scheduler that emits trace logs.
//! * [`ingest`] — parsing trace files into events, tokenization, vocabulary
//!   construction, sequence segmentation and pairing, and the corpus file
//!   format.
//! * [`model`] — the GRU encoder-decoder, training loop, greedy decoding,
//!   gradient checking, and the checkpoint format.
//! * [`eval`] — BLEU-1 scoring, accuracy aggregation, node-tuple extraction,
//!   benign/anomalous classification, and the detection report.

pub mod eval;
pub mod ingest;
pub mod model;
pub mod sim;
pub mod trace;
