//! The sequence-corpus file: a versioned, line-oriented container holding
//! the vocabulary and the indexed `(input, target)` pairs produced by the
//! ingest pipeline.
//!
//! ```text
//! adlog-corpus v1
//! arity 6
//! maxlen 100
//! vocab <count>
//! <one token per line, in index order>
//! pairs <count>
//! pair <context>
//! in <role_offset> <t_start_us> <t_end_us> <token indices...>
//! out <role_offset> <t_start_us> <t_end_us> <token indices...>
//! ```

use super::vocab::{VocabError, Vocabulary};
use std::io::{self, BufRead, Write};
use thiserror::Error;

pub const CORPUS_HEADER: &str = "adlog-corpus v1";

/// A chunk of encoded event tokens from one protocol context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    /// Vocabulary indices.
    pub tokens: Vec<u32>,
    /// Protocol context label the chunk was segmented under.
    pub context: String,
    /// Timestamps (microseconds) of the first and last contributing event.
    pub span_us: (u64, u64),
    /// Position of the first token within the fixed-arity event tuple; the
    /// token at offset `p` has field role `(role_offset + p) % arity`.
    pub role_offset: u8,
}

/// A training pair: the target sequence directly follows the input sequence
/// within one context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePair {
    pub input: EventSequence,
    pub target: EventSequence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    /// Tokens per event of the tokenizer that produced the corpus.
    pub arity: usize,
    /// Maximum sequence length used during segmentation.
    pub max_len: usize,
    pub pairs: Vec<SequencePair>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Vocab {
        line: usize,
        #[source]
        source: VocabError,
    },
}

fn malformed(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed { line, message: message.into() }
}

impl Corpus {
    pub fn save(&self, sink: &mut dyn Write) -> io::Result<()> {
        let mut w = io::BufWriter::new(sink);
        writeln!(w, "{CORPUS_HEADER}")?;
        writeln!(w, "arity {}", self.arity)?;
        writeln!(w, "maxlen {}", self.max_len)?;
        writeln!(w, "vocab {}", self.vocab.len())?;
        for token in self.vocab.tokens() {
            debug_assert!(!token.contains(char::is_whitespace));
            writeln!(w, "{token}")?;
        }
        writeln!(w, "pairs {}", self.pairs.len())?;
        for pair in &self.pairs {
            writeln!(w, "pair {}", pair.target.context)?;
            for (tag, seq) in [("in", &pair.input), ("out", &pair.target)] {
                write!(w, "{tag} {} {} {}", seq.role_offset, seq.span_us.0, seq.span_us.1)?;
                for t in &seq.tokens {
                    write!(w, " {t}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    }

    pub fn load(source: &mut dyn BufRead) -> Result<Self, CorpusError> {
        let mut lines = source.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), CorpusError> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(malformed(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (no, header) = next("header")?;
        if header != CORPUS_HEADER {
            return Err(malformed(no, format!("bad header `{header}`")));
        }
        let arity = parse_kv(&mut next, "arity")?;
        let max_len = parse_kv(&mut next, "maxlen")?;
        if arity == 0 {
            return Err(malformed(2, "arity must be positive"));
        }

        let vocab_len: usize = parse_kv(&mut next, "vocab")?;
        let mut tokens = Vec::with_capacity(vocab_len);
        let mut vocab_line = 0;
        for _ in 0..vocab_len {
            let (no, token) = next("vocabulary token")?;
            vocab_line = no;
            tokens.push(token);
        }
        let vocab = Vocabulary::from_tokens(tokens)
            .map_err(|source| CorpusError::Vocab { line: vocab_line, source })?;

        let pair_count: usize = parse_kv(&mut next, "pairs")?;
        let mut pairs = Vec::with_capacity(pair_count);
        for _ in 0..pair_count {
            let (no, line) = next("pair")?;
            let context = line
                .strip_prefix("pair ")
                .ok_or_else(|| malformed(no, "expected `pair <context>`"))?
                .to_string();
            let input = parse_seq(&mut next, "in", &context, &vocab)?;
            let target = parse_seq(&mut next, "out", &context, &vocab)?;
            pairs.push(SequencePair { input, target });
        }
        Ok(Corpus { vocab, arity, max_len, pairs })
    }
}

fn parse_kv(
    next: &mut impl FnMut(&str) -> Result<(usize, String), CorpusError>,
    key: &str,
) -> Result<usize, CorpusError> {
    let (no, line) = next(key)?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| malformed(no, format!("expected `{key} <n>`, got `{line}`")))?;
    value
        .parse()
        .map_err(|_| malformed(no, format!("invalid {key} value `{value}`")))
}

fn parse_seq(
    next: &mut impl FnMut(&str) -> Result<(usize, String), CorpusError>,
    tag: &str,
    context: &str,
    vocab: &Vocabulary,
) -> Result<EventSequence, CorpusError> {
    let (no, line) = next(tag)?;
    let rest = line
        .strip_prefix(tag)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| malformed(no, format!("expected `{tag} ...` line")))?;
    let mut fields = rest.split(' ');
    let mut field = |name: &str| -> Result<&str, CorpusError> {
        fields.next().ok_or_else(|| malformed(no, format!("missing {name}")))
    };
    let role_offset: u8 = field("role offset")?
        .parse()
        .map_err(|_| malformed(no, "invalid role offset"))?;
    let t0: u64 = field("span start")?.parse().map_err(|_| malformed(no, "invalid span start"))?;
    let t1: u64 = field("span end")?.parse().map_err(|_| malformed(no, "invalid span end"))?;
    let mut tokens = Vec::new();
    for t in fields {
        let id: u32 = t.parse().map_err(|_| malformed(no, format!("invalid token index `{t}`")))?;
        if id as usize >= vocab.len() {
            return Err(malformed(no, format!("token index {id} out of range")));
        }
        tokens.push(id);
    }
    if tokens.is_empty() {
        return Err(malformed(no, "sequence has no tokens"));
    }
    Ok(EventSequence {
        tokens,
        context: context.to_string(),
        span_us: (t0, t1),
        role_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corpus() -> Corpus {
        let vocab = Vocabulary::from_stream(["r", "n2", "n14", "udp", "s3", "-------"]);
        let seq = |tokens: Vec<u32>, span: (u64, u64), off: u8| EventSequence {
            tokens,
            context: "udp".to_string(),
            span_us: span,
            role_offset: off,
        };
        Corpus {
            vocab,
            arity: 6,
            max_len: 100,
            pairs: vec![SequencePair {
                input: seq(vec![3, 4, 5, 6, 7, 8], (0, 1000), 0),
                target: seq(vec![3, 4, 5, 6, 7, 8], (1000, 2000), 0),
            }],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = sample_corpus();
        let mut bytes = Vec::new();
        corpus.save(&mut bytes).unwrap();
        let loaded = Corpus::load(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn rejects_bad_header() {
        let err = Corpus::load(&mut "not-a-corpus\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn rejects_out_of_range_token() {
        let corpus = sample_corpus();
        let mut bytes = Vec::new();
        corpus.save(&mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap().replace(" 8\n", " 99\n");
        let err = Corpus::load(&mut text.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { .. }));
    }
}
