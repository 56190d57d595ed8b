use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::text::{TokenSequence, PAD};

/// An encoded sentence and its 0/1 label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub seq: TokenSequence,
    pub label: u8,
}

/// Sequences padded with PAD to a common length, row-major B×N.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub labels: Vec<u8>,
    pub seq_len: usize,
}

impl Batch {
    pub fn from_sequences(seqs: &[&TokenSequence], labels: &[u8]) -> Result<Self, TrainError> {
        if seqs.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if seqs.len() != labels.len() {
            return Err(TrainError::LabelCount {
                sequences: seqs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(TrainError::BadLabel(bad as f64));
        }
        let seq_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if seq_len == 0 {
            return Err(TrainError::EmptySequence);
        }
        let mut ids = vec![PAD; seqs.len() * seq_len];
        let mut mask = vec![false; seqs.len() * seq_len];
        let mut lengths = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            if s.is_empty() {
                return Err(TrainError::EmptySequence);
            }
            ids[b * seq_len..b * seq_len + s.len()].copy_from_slice(s.ids());
            mask[b * seq_len..b * seq_len + s.len()].fill(true);
            lengths.push(s.len());
        }
        Ok(Self {
            ids,
            mask,
            lengths,
            labels: labels.to_vec(),
            seq_len,
        })
    }

    /// A batch of one, label 0.
    pub fn single(seq: &TokenSequence) -> Result<Self, TrainError> {
        Self::from_sequences(&[seq], &[0])
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }
}

/// Iterator over padded batches in a fixed (optionally shuffled) order.
pub struct Batches<'a> {
    data: &'a [LabeledSequence],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked = &self.order[self.pos..end];
        self.pos = end;
        let seqs: Vec<&TokenSequence> = picked.iter().map(|&i| &self.data[i].seq).collect();
        let labels: Vec<u8> = picked.iter().map(|&i| self.data[i].label).collect();
        Some(Batch::from_sequences(&seqs, &labels).expect("validated up front"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Splits `data` into batches of `batch_size` (last one may be short).
/// With `shuffle`, the order is a ChaCha8 permutation seeded by `seed`.
pub fn make_batches(
    data: &[LabeledSequence],
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Batches<'_>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be at least 1".into()));
    }
    if let Some(bad) = data.iter().find(|d| d.label > 1) {
        return Err(TrainError::BadLabel(bad.label as f64));
    }
    if data.iter().any(|d| d.seq.is_empty()) {
        return Err(TrainError::EmptySequence);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches {
        data,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;

    fn seq_of(len: usize) -> LabeledSequence {
        let v = Vocabulary::default();
        LabeledSequence {
            seq: TokenSequence::from_ids(&v, vec![1; len]).unwrap(),
            label: (len % 2) as u8,
        }
    }

    #[test]
    fn pads_to_batch_max() {
        let data = vec![seq_of(3), seq_of(5)];
        let b = make_batches(&data, 8, 0, false).unwrap().next().unwrap();
        assert_eq!(b.seq_len, 5);
        assert_eq!(&b.mask[..5], &[true, true, true, false, false]);
        assert_eq!(&b.mask[5..], &[true; 5]);
        assert_eq!(&b.ids[3..5], &[PAD, PAD]);
        assert_eq!(b.lengths, vec![3, 5]);
    }

    #[test]
    fn sizes_and_determinism() {
        let data: Vec<_> = (1..=10).map(seq_of).collect();
        let sizes: Vec<usize> = make_batches(&data, 4, 0, false)
            .unwrap()
            .map(|b| b.size())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let run = |seed| -> Vec<Vec<usize>> {
            make_batches(&data, 4, seed, true)
                .unwrap()
                .map(|b| b.lengths)
                .collect()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn rejects_empty_and_zero_batch() {
        assert!(matches!(
            make_batches(&[], 4, 0, false),
            Err(TrainError::EmptyDataset)
        ));
        assert!(make_batches(&[seq_of(2)], 0, 0, false).is_err());
    }
}
