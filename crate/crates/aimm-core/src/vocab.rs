//! Fixed 64-word vocabulary and word-level tokenizer.
//!
//! Ids are dense in [0, 64) with PAD at 0 and never change: the word list is
//! a compile-time constant, serialized into backbone checkpoints so loaders
//! can verify id stability via a hash.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

pub const PAD: u16 = 0;
pub const VOCAB_SIZE: usize = 64;
/// Keyword slots are padded to this many tokens.
pub const KEYWORD_TOKENS: usize = 2;

/// The full vocabulary, id = index. Task keywords first, then the filler
/// words the pretraining grammar draws from.
pub const WORDS: [&str; VOCAB_SIZE] = [
    "<pad>", "position", "los", "status", "precoding", "beam", "selection", "path", "loss",
    "user", "information", "the", "a", "of", "from", "this", "that", "is", "what", "infer",
    "estimate", "predict", "report", "give", "tell", "me", "please", "channel", "wireless",
    "signal", "antenna", "array", "base", "station", "device", "map", "area", "scene", "data",
    "matrix", "vector", "link", "measurement", "feature", "state", "quality", "level", "value",
    "index", "power", "noise", "frequency", "carrier", "direct", "reflected", "strong", "weak",
    "optimal", "best", "current", "for", "about", "show", "compute",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab { words: WORDS.iter().map(|w| w.to_string()).collect() }
    }

    /// Rebuild from a serialized word list (checkpoint header).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() != VOCAB_SIZE {
            return Err(Error::Checkpoint(format!(
                "vocabulary must have {} words, got {}",
                VOCAB_SIZE,
                words.len()
            )));
        }
        Ok(Vocab { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Result<u16> {
        let lower = word.to_lowercase();
        self.words
            .iter()
            .position(|w| *w == lower)
            .map(|i| i as u16)
            .ok_or(Error::Vocabulary { word: word.to_string() })
    }

    /// One id per whitespace-separated word, case-insensitive.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u16>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Tokenize a task keyword and pad with PAD to the 2-token slot.
    pub fn tokenize_keyword(&self, keyword: &str) -> Result<[u16; KEYWORD_TOKENS]> {
        let ids = self.tokenize(keyword)?;
        if ids.is_empty() || ids.len() > KEYWORD_TOKENS {
            return Err(Error::Vocabulary { word: keyword.to_string() });
        }
        let mut out = [PAD; KEYWORD_TOKENS];
        out[..ids.len()].copy_from_slice(&ids);
        Ok(out)
    }

    /// SHA-256 of the newline-joined word list, hex-encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([b'\n']);
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
