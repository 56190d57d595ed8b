//! Seeded cue-word corpus for desk-scale checks: a sentence is positive
//! exactly when it contains [`CUE_TOKEN`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::{Example, Split};

pub const CUE_TOKEN: &str = "totally";
pub const MIN_WORDS: usize = 5;
pub const MAX_WORDS: usize = 15;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("need at least 10 sentences, got {0}")]
    TooFewSentences(usize),
    #[error("need a vocabulary of at least 10 words, got {0}")]
    TooFewWords(usize),
}

/// Filler vocabulary: `vocab_size − 1` words plus the cue.
pub fn filler_words(vocab_size: usize) -> Vec<String> {
    let width = (vocab_size - 1).to_string().len();
    (0..vocab_size - 1)
        .map(|i| format!("w{i:0width$}"))
        .collect()
}

/// `n` sentences of 5–15 tokens, half of them carrying the cue once at a
/// random position. Each class is split 80/20 into train/test, and lines
/// come out in a seeded random order.
pub fn generate(n: usize, vocab_size: usize, seed: u64) -> Result<Vec<Example>, SyntheticError> {
    if n < 10 {
        return Err(SyntheticError::TooFewSentences(n));
    }
    if vocab_size < 10 {
        return Err(SyntheticError::TooFewWords(vocab_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = filler_words(vocab_size);
    let positives = n / 2;
    let mut out = Vec::with_capacity(n);
    for (label, count) in [(1u8, positives), (0u8, n - positives)] {
        let train_count = (count as f64 * TRAIN_FRACTION).round() as usize;
        for i in 0..count {
            let len = rng.gen_range(MIN_WORDS..=MAX_WORDS);
            let mut words: Vec<&str> = (0..len - label as usize)
                .map(|_| fillers[rng.gen_range(0..fillers.len())].as_str())
                .collect();
            if label == 1 {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, CUE_TOKEN);
            }
            out.push(Example {
                text: words.join(" "),
                label,
                split: Some(if i < train_count {
                    Split::Train
                } else {
                    Split::Test
                }),
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn construction_rules() {
        let data = generate(1000, 50, 3).unwrap();
        assert_eq!(data.len(), 1000);
        assert_eq!(data.iter().filter(|e| e.label == 1).count(), 500);
        assert_eq!(
            data.iter()
                .filter(|e| e.split == Some(Split::Train))
                .count(),
            800
        );
        let mut words = std::collections::BTreeSet::new();
        for e in &data {
            let toks = tokenize(&e.text);
            assert!((MIN_WORDS..=MAX_WORDS).contains(&toks.len()));
            assert_eq!(toks.iter().any(|t| t == CUE_TOKEN), e.label == 1);
            words.extend(toks);
        }
        assert!(words.len() <= 50);
    }

    #[test]
    fn seeded() {
        assert_eq!(generate(50, 10, 9).unwrap(), generate(50, 10, 9).unwrap());
        assert_ne!(generate(50, 10, 9).unwrap(), generate(50, 10, 10).unwrap());
    }

    #[test]
    fn rejects_tiny_requests() {
        assert_eq!(generate(9, 50, 0), Err(SyntheticError::TooFewSentences(9)));
        assert_eq!(generate(10, 9, 0), Err(SyntheticError::TooFewWords(9)));
    }
}
