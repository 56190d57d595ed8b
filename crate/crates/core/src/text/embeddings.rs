use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TextError, Vocabulary, PAD, UNK};
use crate::tensor::Tensor;

/// Half-width of the uniform init for rows without a pretrained vector.
pub const EMBED_INIT_BOUND: f64 = 0.05;

/// V×D lookup table. Row [`PAD`] is all zeros and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Uniform(−0.05, 0.05) rows drawn in row-major order from a ChaCha8
    /// stream seeded with `seed`, then PAD zeroed.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = Tensor::uniform(&[vocab_size, dim], EMBED_INIT_BOUND, &mut rng);
        matrix.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
        Self {
            matrix,
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Reads a `word v1 … vD` text file. Vocabulary words found in the file get
/// their vector; the rest keep the seeded random init of
/// [`EmbeddingTable::random`]. Returns the table (frozen) and the fraction
/// of non-reserved vocabulary words the file covered.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(EmbeddingTable, f64), TextError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| TextError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut dim = None;
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| TextError::EmbeddingValue {
                    path: shown.clone(),
                    line: lineno + 1,
                    token: tok.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(TextError::EmbeddingDim {
                path: shown,
                line: lineno + 1,
                expected,
                found: values.len(),
            });
        }
        if let Some(id) = vocab.id(word) {
            if id != PAD && found[id].is_none() {
                found[id] = Some(values);
            }
        }
    }
    let dim = dim.ok_or(TextError::EmbeddingEmpty { path: shown })?;
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut covered = 0;
    for (id, row) in found.into_iter().enumerate() {
        if let Some(values) = row {
            table.matrix.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            if id > UNK {
                covered += 1;
            }
        }
    }
    table.trainable = false;
    let regular = vocab.len() - 2;
    let coverage = if regular == 0 {
        1.0
    } else {
        covered as f64 / regular as f64
    };
    Ok((table, coverage))
}
