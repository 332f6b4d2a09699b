//! Trace-log ingestion: parsing, tokenization, vocabulary construction, and
//! context-delimited sequence pairing.
//!
//! Events are tokenized into fixed-arity field tuples, partitioned by
//! protocol context, greedily chunked into sequences of at most `max_len`
//! tokens, and paired consecutively within each context following event
//! timestamps. The whole pipeline is a pure function of the trace bytes and
//! the options, so a fixed input always yields a bit-identical corpus.

mod corpus;
mod vocab;

pub use corpus::{Corpus, CorpusError, EventSequence, SequencePair, CORPUS_HEADER};
pub use vocab::{Vocabulary, VocabError, EOS, EOS_TOKEN, RESERVED, SOS, SOS_TOKEN, UNK, UNK_TOKEN};

use crate::trace::{parse_trace_line, ParseError, TraceEvent};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{self, BufRead};
use thiserror::Error;

/// Default maximum sequence length in tokens.
pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("test fraction must lie strictly between 0 and 1 (got {0})")]
    InvalidFraction(f64),
}

/// Converts one event into a fixed-arity token tuple.
pub trait EventTokenizer {
    /// Number of tokens emitted per event.
    fn arity(&self) -> usize;
    fn tokenize(&self, event: &TraceEvent) -> Vec<String>;
}

/// The default tokenizer: `(kind, from, to, protocol, seq, flags)`.
///
/// Raw timestamps and packet ids are noise for next-event prediction and are
/// excluded from the tokens; timestamps are retained as sequence metadata.
/// `seq_bucket` optionally maps sequence numbers to `seq % k` for traces
/// whose counters are too diverse to tokenize raw.
#[derive(Debug, Clone, Default)]
pub struct FieldTupleTokenizer {
    pub seq_bucket: Option<u32>,
}

impl EventTokenizer for FieldTupleTokenizer {
    fn arity(&self) -> usize {
        6
    }

    fn tokenize(&self, event: &TraceEvent) -> Vec<String> {
        let seq = match self.seq_bucket {
            Some(k) if k > 0 => event.seq % k,
            _ => event.seq,
        };
        vec![
            event.kind.code().to_string(),
            format!("n{}", event.from),
            format!("n{}", event.to),
            event.protocol.clone(),
            format!("s{seq}"),
            event.flags.clone(),
        ]
    }
}

/// Token position of the source node within the default field tuple.
pub const ROLE_FROM: usize = 1;
/// Token position of the destination node within the default field tuple.
pub const ROLE_TO: usize = 2;

/// Parses a whole trace file; blank lines are skipped, malformed lines are
/// reported with their 1-based line number.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceEvent>, IngestError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            parse_trace_line(&line).map_err(|source| IngestError::Parse { line: i + 1, source })?,
        );
    }
    Ok(events)
}

/// Partitions time-ordered events by protocol context and greedily chunks
/// each context's token stream into sequences of at most `max_len` tokens.
/// Contexts appear in first-occurrence order; chunk order follows timestamps.
pub fn segment_sequences(
    events: &[TraceEvent],
    max_len: usize,
    tokenizer: &dyn EventTokenizer,
    vocab: &Vocabulary,
) -> Vec<EventSequence> {
    assert!(max_len > 0, "max_len must be positive");
    let arity = tokenizer.arity();
    let mut order: Vec<String> = Vec::new();
    let mut streams: HashMap<String, (Vec<u32>, Vec<u64>)> = HashMap::new();
    for event in events {
        if !streams.contains_key(&event.protocol) {
            order.push(event.protocol.clone());
            streams.insert(event.protocol.clone(), (Vec::new(), Vec::new()));
        }
        let (tokens, times) = streams.get_mut(&event.protocol).unwrap();
        for token in tokenizer.tokenize(event) {
            tokens.push(vocab.encode(&token));
            times.push(event.time_us);
        }
    }

    let mut sequences = Vec::new();
    for context in &order {
        let (tokens, times) = &streams[context];
        for (j, chunk) in tokens.chunks(max_len).enumerate() {
            let start = j * max_len;
            let end = start + chunk.len();
            sequences.push(EventSequence {
                tokens: chunk.to_vec(),
                context: context.clone(),
                span_us: (times[start], times[end - 1]),
                role_offset: (start % arity) as u8,
            });
        }
    }
    sequences
}

/// Pairs consecutive sequences within each context: `[a, b, c]` yields
/// `[(a, b), (b, c)]`.
pub fn pair_sequences(sequences: &[EventSequence]) -> Vec<SequencePair> {
    sequences
        .windows(2)
        .filter(|w| w[0].context == w[1].context)
        .map(|w| SequencePair { input: w[0].clone(), target: w[1].clone() })
        .collect()
}

/// Deterministic seeded split; the test set holds `round(n * test_fraction)`
/// pairs. Both halves keep corpus order.
pub fn split_train_test(
    pairs: &[SequencePair],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SequencePair>, Vec<SequencePair>), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::InvalidFraction(test_fraction));
    }
    let n = pairs.len();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_count = (n as f64 * test_fraction).round() as usize;
    let (test_idx, train_idx) = indices.split_at(test_count);
    let mut test_idx = test_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let take = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect();
    Ok((take(&train_idx), take(&test_idx)))
}

/// Ingest pipeline options.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_len: usize,
    pub seq_bucket: Option<u32>,
    /// Freeze the vocabulary instead of building it from the input; tokens
    /// absent from it map to [`UNK`].
    pub vocab: Option<Vocabulary>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { max_len: DEFAULT_MAX_LEN, seq_bucket: None, vocab: None }
    }
}

/// Runs the full ingest pipeline over one or more trace files. Each file is
/// segmented and paired independently (its sequences restart at its own
/// timeline); the vocabulary spans all files in order.
pub fn build_corpus(files: &[Vec<TraceEvent>], options: &IngestOptions) -> Corpus {
    let tokenizer = FieldTupleTokenizer { seq_bucket: options.seq_bucket };
    let vocab = match &options.vocab {
        Some(v) => v.clone(),
        None => {
            let mut vocab = Vocabulary::new();
            for events in files {
                for event in events {
                    for token in tokenizer.tokenize(event) {
                        vocab.intern(&token);
                    }
                }
            }
            vocab
        }
    };
    let mut pairs = Vec::new();
    for events in files {
        let sequences = segment_sequences(events, options.max_len, &tokenizer, &vocab);
        pairs.extend(pair_sequences(&sequences));
    }
    Corpus { vocab, arity: tokenizer.arity(), max_len: options.max_len, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Addr, EventKind, NodeId};

    fn event(kind: EventKind, time_us: u64, from: u32, to: u32, proto: &str, seq: u32) -> TraceEvent {
        TraceEvent {
            kind,
            time_us,
            from: NodeId(from),
            to: NodeId(to),
            protocol: proto.to_string(),
            size: 1500,
            flags: "-------".to_string(),
            flow_id: 1,
            src_addr: Addr::new(from, 0),
            dst_addr: Addr::new(to, 0),
            seq,
            pkt_id: 1,
        }
    }

    #[test]
    fn tokenize_emits_field_tuple() {
        let tok = FieldTupleTokenizer::default();
        let ev = event(EventKind::Receive, 114_000, 2, 14, "udp", 3);
        assert_eq!(tok.tokenize(&ev), vec!["r", "n2", "n14", "udp", "s3", "-------"]);
    }

    #[test]
    fn tokenize_ignores_pkt_id() {
        let tok = FieldTupleTokenizer::default();
        let a = event(EventKind::Enqueue, 5, 1, 2, "udp", 9);
        let mut b = a.clone();
        b.pkt_id = 777;
        assert_eq!(tok.tokenize(&a), tok.tokenize(&b));
    }

    #[test]
    fn tokenize_with_seq_bucket() {
        let tok = FieldTupleTokenizer { seq_bucket: Some(8) };
        let ev = event(EventKind::Enqueue, 5, 1, 2, "udp", 19);
        assert_eq!(tok.tokenize(&ev)[4], "s3");
    }

    /// One token per event; used to exercise segmentation at the token level.
    struct UnitTokenizer;

    impl EventTokenizer for UnitTokenizer {
        fn arity(&self) -> usize {
            1
        }
        fn tokenize(&self, event: &TraceEvent) -> Vec<String> {
            vec![format!("s{}", event.seq)]
        }
    }

    #[test]
    fn greedy_chunking_at_max_len() {
        let events: Vec<_> =
            (0..250).map(|i| event(EventKind::Enqueue, i, 1, 2, "udp", i as u32)).collect();
        let vocab = Vocabulary::from_stream(
            events.iter().map(|e| format!("s{}", e.seq)).collect::<Vec<_>>().iter().map(|s| s.as_str()),
        );
        let seqs = segment_sequences(&events, 100, &UnitTokenizer, &vocab);
        let lens: Vec<_> = seqs.iter().map(|s| s.tokens.len()).collect();
        assert_eq!(lens, vec![100, 100, 50]);
    }

    #[test]
    fn chunk_role_offsets_follow_the_stream_position() {
        let events: Vec<_> =
            (0..42).map(|i| event(EventKind::Enqueue, i, 1, 2, "udp", i as u32)).collect();
        let tok = FieldTupleTokenizer::default();
        let mut vocab = Vocabulary::new();
        for e in &events {
            for t in tok.tokenize(e) {
                vocab.intern(&t);
            }
        }
        let seqs = segment_sequences(&events, 100, &tok, &vocab);
        // 42 events * 6 tokens = 252 tokens -> chunks of 100, 100, 52.
        assert_eq!(seqs.iter().map(|s| s.tokens.len()).collect::<Vec<_>>(), vec![100, 100, 52]);
        assert_eq!(seqs.iter().map(|s| s.role_offset).collect::<Vec<_>>(), vec![0, 4, 2]);
    }

    #[test]
    fn contexts_are_segmented_separately() {
        let mut events = Vec::new();
        for i in 0..10u32 {
            events.push(event(EventKind::Enqueue, u64::from(i) * 10, 1, 2, "tcp", i));
            events.push(event(EventKind::Enqueue, u64::from(i) * 10 + 5, 3, 4, "udp", i));
        }
        let tok = FieldTupleTokenizer::default();
        let mut vocab = Vocabulary::new();
        for e in &events {
            for t in tok.tokenize(e) {
                vocab.intern(&t);
            }
        }
        let seqs = segment_sequences(&events, 100, &tok, &vocab);
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].context, "tcp");
        assert_eq!(seqs[1].context, "udp");
        assert!(seqs.iter().all(|s| s.span_us.0 <= s.span_us.1));
    }

    #[test]
    fn empty_events_yield_no_sequences() {
        let vocab = Vocabulary::new();
        assert!(segment_sequences(&[], 100, &FieldTupleTokenizer::default(), &vocab).is_empty());
    }

    fn seq(context: &str, t0: u64, t1: u64) -> EventSequence {
        EventSequence {
            tokens: vec![3],
            context: context.to_string(),
            span_us: (t0, t1),
            role_offset: 0,
        }
    }

    #[test]
    fn consecutive_sequences_pair_up() {
        let seqs = vec![seq("udp", 0, 10), seq("udp", 10, 20), seq("udp", 20, 30)];
        let pairs = pair_sequences(&seqs);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].input.span_us, (0, 10));
        assert_eq!(pairs[0].target.span_us, (10, 20));
        assert_eq!(pairs[1].input.span_us, (10, 20));
    }

    #[test]
    fn single_sequence_yields_no_pairs() {
        assert!(pair_sequences(&[seq("udp", 0, 10)]).is_empty());
    }

    #[test]
    fn pairs_do_not_cross_contexts() {
        let seqs = vec![seq("tcp", 0, 10), seq("udp", 0, 10), seq("udp", 10, 20)];
        let pairs = pair_sequences(&seqs);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].input.context, "udp");
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let pairs: Vec<_> = (0..10u64)
            .map(|i| SequencePair { input: seq("udp", i, i), target: seq("udp", i, i) })
            .collect();
        let (train, test) = split_train_test(&pairs, 0.2, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let (train2, test2) = split_train_test(&pairs, 0.2, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let mut all: Vec<_> = train.iter().chain(test.iter()).map(|p| p.input.span_us.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10u64).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_out_of_range_fraction() {
        let pairs = vec![SequencePair { input: seq("udp", 0, 0), target: seq("udp", 0, 0) }];
        assert!(matches!(split_train_test(&pairs, 0.0, 1), Err(IngestError::InvalidFraction(_))));
        assert!(matches!(split_train_test(&pairs, 1.0, 1), Err(IngestError::InvalidFraction(_))));
    }

    #[test]
    fn parse_trace_reports_line_numbers() {
        let text = "+ 0.1 1 2 udp 10 ------- 1 1.0 2.0 0 1\nbogus line\n";
        let err = parse_trace(text.as_bytes()).unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn frozen_vocab_maps_unseen_tokens_to_unk() {
        let events = vec![event(EventKind::Enqueue, 0, 1, 2, "udp", 0)];
        let frozen = Vocabulary::from_stream(["+", "n1", "n2", "udp"]);
        let corpus = build_corpus(
            &[events],
            &IngestOptions { max_len: 100, seq_bucket: None, vocab: Some(frozen) },
        );
        // "s0" and "-------" are absent from the frozen vocabulary.
        assert!(corpus.pairs.is_empty()); // single sequence, no pair
        let tok = FieldTupleTokenizer::default();
        let seqs = segment_sequences(
            &[event(EventKind::Enqueue, 0, 1, 2, "udp", 0)],
            100,
            &tok,
            &corpus.vocab,
        );
        assert_eq!(seqs[0].tokens[4], UNK);
        assert_eq!(seqs[0].tokens[5], UNK);
    }

    #[test]
    fn pair_chronology_and_context_purity_hold_on_a_generated_stream() {
        let mut events = Vec::new();
        let mut t = 0u64;
        for i in 0..200u32 {
            let proto = if i % 3 == 0 { "tcp" } else { "udp" };
            events.push(event(EventKind::Enqueue, t, i % 5, (i + 1) % 5, proto, i));
            t += 7;
        }
        let corpus = build_corpus(&[events], &IngestOptions { max_len: 50, ..Default::default() });
        assert!(!corpus.pairs.is_empty());
        for pair in &corpus.pairs {
            assert_eq!(pair.input.context, pair.target.context);
            assert!(pair.input.span_us.1 <= pair.target.span_us.0);
            assert!(pair.input.tokens.len() <= 50 && pair.target.tokens.len() <= 50);
            for &t in pair.input.tokens.iter().chain(&pair.target.tokens) {
                assert!((t as usize) < corpus.vocab.len());
            }
        }
    }
}
