//! Token/index bijection with reserved control tokens.

use std::collections::HashMap;
use thiserror::Error;

pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Index of the start-of-sequence token.
pub const SOS: u32 = 0;
/// Index of the end-of-sequence token.
pub const EOS: u32 = 1;
/// Index that unknown tokens map to.
pub const UNK: u32 = 2;

pub const RESERVED: [&str; 3] = [SOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary must start with the reserved tokens {RESERVED:?}")]
    MissingReserved,
    #[error("duplicate token `{0}`")]
    Duplicate(String),
}

/// Bijection between tokens and dense indices. Reserved tokens occupy
/// indices 0..3; the rest are assigned in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut vocab = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for token in RESERVED {
            vocab.push(token.to_string());
        }
        vocab
    }

    /// Builds a vocabulary from a token stream in first-occurrence order.
    pub fn from_stream<'a>(stream: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocabulary::new();
        for token in stream {
            vocab.intern(token);
        }
        vocab
    }

    /// Restores a vocabulary from a stored token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < RESERVED.len()
            || RESERVED.iter().zip(&tokens).any(|(r, t)| r != t)
        {
            return Err(VocabError::MissingReserved);
        }
        let mut vocab = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for token in tokens {
            if vocab.index.contains_key(&token) {
                return Err(VocabError::Duplicate(token));
            }
            vocab.push(token);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) -> u32 {
        let id = self.tokens.len() as u32;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Returns the token's index, adding it if unseen.
    pub fn intern(&mut self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push(token.to_string()),
        }
    }

    /// Index of a known token.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Index of the token, or [`UNK`] if absent.
    pub fn encode(&self, token: &str) -> u32 {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_keeps_only_reserved() {
        let vocab = Vocabulary::from_stream([]);
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.token(SOS), Some(SOS_TOKEN));
        assert_eq!(vocab.token(EOS), Some(EOS_TOKEN));
        assert_eq!(vocab.token(UNK), Some(UNK_TOKEN));
    }

    #[test]
    fn first_occurrence_ordering() {
        let vocab = Vocabulary::from_stream(["a", "b", "a"]);
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.lookup("a"), Some(3));
        assert_eq!(vocab.lookup("b"), Some(4));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = Vocabulary::from_stream(["a"]);
        assert_eq!(vocab.encode("never-seen"), UNK);
        assert_eq!(vocab.encode("a"), 3);
    }

    #[test]
    fn round_trips_through_token_list() {
        let vocab = Vocabulary::from_stream(["x", "y"]);
        let restored = Vocabulary::from_tokens(vocab.tokens().to_vec()).unwrap();
        assert_eq!(restored, vocab);
    }

    #[test]
    fn token_list_must_start_with_reserved() {
        assert!(matches!(
            Vocabulary::from_tokens(vec!["a".into(), "b".into(), "c".into()]),
            Err(VocabError::MissingReserved)
        ));
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.push("a".into());
        tokens.push("a".into());
        assert!(matches!(Vocabulary::from_tokens(tokens), Err(VocabError::Duplicate(_))));
    }
}
