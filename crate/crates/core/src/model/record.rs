use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Attention maps captured during one forward pass: `maps[layer][head]` is
/// an N×N row-stochastic matrix (query rows, key columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub maps: Vec<Vec<Tensor>>,
    /// Number of real (unpadded) tokens; columns at or past it are zero.
    pub length: usize,
}

impl AttentionRecord {
    pub fn num_layers(&self) -> usize {
        self.maps.len()
    }

    pub fn num_heads(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }

    /// Cuts every map down to the real tokens.
    pub fn trimmed(&self) -> AttentionRecord {
        let n = self.length;
        let maps = self
            .maps
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|m| {
                        let data = (0..n).flat_map(|i| m.row_slice(i)[..n].to_vec()).collect();
                        Tensor::new(vec![n, n], data).expect("n ≥ 1")
                    })
                    .collect()
            })
            .collect();
        AttentionRecord { maps, length: n }
    }

    /// Largest deviation of a row sum from 1, and whether any padded key
    /// column carries non-zero weight.
    pub fn check(&self) -> (f64, bool) {
        let mut worst = 0.0f64;
        let mut leak = false;
        for m in self.maps.iter().flatten() {
            for i in 0..m.rows() {
                let row = m.row_slice(i);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                leak |= row[self.length..].iter().any(|&v| v != 0.0);
            }
        }
        (worst, leak)
    }
}
