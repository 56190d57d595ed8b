//! Sentence → token ids, plus the embedding table the model starts from.

mod dataset;
mod embeddings;
mod vocab;

pub use dataset::{load_dataset, write_dataset, Example, Split};
pub use embeddings::{load_embeddings, EmbeddingTable, EMBED_INIT_BOUND};
pub use vocab::{build_vocab, TokenSequence, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use thiserror::Error;

/// Default sequence cap; longer inputs are truncated.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot encode an empty token list")]
    EmptySequence,
    #[error("{path}:{line}: embedding has {found} values, expected {expected}")]
    EmbeddingDim {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: cannot parse {token:?} as a real number")]
    EmbeddingValue {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}: no embedding vectors found")]
    EmbeddingEmpty { path: String },
    #[error("{path}:{line}: {reason}")]
    Dataset {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

/// Lowercases, splits on whitespace, and emits each punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if PUNCTUATION.contains(&ch) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "if", "in", "into",
    "is", "it", "its", "of", "on", "or", "so", "such", "that", "the", "their", "then", "there",
    "these", "they", "this", "to", "was", "were", "will", "with",
];

/// Drops common English function words. Off unless the run enables it.
pub fn remove_stop_words(tokens: Vec<String>) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| !STOP_WORDS.contains(&t.as_str()))
        .collect()
}
