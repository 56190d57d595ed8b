//! Checkpoint files: a JSON header followed by a little-endian `f64` payload.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "SRCATTN\n"
//! version  u32 LE    FORMAT_VERSION
//! hdr_len  u64 LE    byte length of the JSON header
//! header   hdr_len   UTF-8 JSON (config, vocabulary, tensor table, ...)
//! payload  8·k       f64 LE: parameters, then Adam m, then Adam v
//! ```
//!
//! The header carries the payload length and its SHA-256 so truncation and
//! bit flips are caught before any model is built.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{AdamState, EpochRecord};
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRCATTN\n";
pub const FORMAT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),
    #[error("checkpoint does not describe a valid model: {0}")]
    Model(#[from] ModelError),
}

/// Bookkeeping that travels with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Vec<(String, Tensor)>,
    pub embedding_frozen: bool,
    pub optimizer: Option<AdamState>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    embedding_frozen: bool,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
    optimizer: Option<AdamState>,
    payload_values: u64,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        vocab: &Vocabulary,
        optimizer: Option<&AdamState>,
        meta: TrainingMeta,
    ) -> Self {
        let store = model.params();
        Self {
            config: model.config().clone(),
            vocab: vocab.clone(),
            params: store
                .names()
                .iter()
                .cloned()
                .zip(store.tensors().iter().cloned())
                .collect(),
            embedding_frozen: store.is_frozen(model.layout().embedding),
            optimizer: optimizer.cloned(),
            meta,
        }
    }

    pub fn to_model(&self) -> Result<Model, ModelError> {
        Model::from_parts(
            self.config.clone(),
            self.params.clone(),
            self.embedding_frozen,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload: Vec<f64> = Vec::new();
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in &self.params {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
                len: t.len() as u64,
            });
            payload.extend_from_slice(t.data());
        }
        if let Some(opt) = &self.optimizer {
            for buf in opt.m.iter().chain(&opt.v) {
                payload.extend_from_slice(buf);
            }
        }
        let mut body = Vec::with_capacity(payload.len() * 8);
        for v in &payload {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            embedding_frozen: self.embedding_frozen,
            meta: self.meta.clone(),
            tensors,
            optimizer: self.optimizer.clone(),
            payload_values: payload.len() as u64,
            payload_sha256: hex(&Sha256::digest(&body)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let available = bytes.len() as u64;
        if bytes.len() < PREFIX_LEN {
            if !CHECKPOINT_MAGIC.starts_with(&bytes[..bytes.len().min(8)]) {
                return Err(CheckpointError::BadMagic);
            }
            return Err(CheckpointError::Truncated {
                needed: PREFIX_LEN as u64,
                available,
            });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let hdr_end = (PREFIX_LEN as u64)
            .checked_add(hdr_len)
            .ok_or_else(|| CheckpointError::Corrupt("header length overflows".into()))?;
        if hdr_end > available {
            return Err(CheckpointError::Truncated {
                needed: hdr_end,
                available,
            });
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..hdr_end as usize])
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        if header.format_version != version {
            return Err(CheckpointError::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let body_len = header
            .payload_values
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Corrupt("payload length overflows".into()))?;
        let needed = hdr_end + body_len;
        if needed > available {
            return Err(CheckpointError::Truncated { needed, available });
        }
        if needed < available {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes after payload",
                available - needed
            )));
        }
        let body = &bytes[hdr_end as usize..];
        if hex(&Sha256::digest(body)) != header.payload_sha256 {
            return Err(CheckpointError::Corrupt("payload checksum mismatch".into()));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let vocab = Vocabulary::from_words(header.vocab.words().to_vec())
            .ok_or_else(|| CheckpointError::Corrupt("vocabulary lacks reserved entries".into()))?;
        let mut cursor = 0u64;
        let mut params = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let expected_len: u64 = e.shape.iter().map(|&d| d as u64).product();
            if e.offset != cursor || e.len != expected_len || e.offset + e.len > values.len() as u64
            {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor table entry {}",
                    e.name
                )));
            }
            let data = values[e.offset as usize..(e.offset + e.len) as usize].to_vec();
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|err| CheckpointError::Corrupt(format!("{}: {err}", e.name)))?;
            params.push((e.name.clone(), t));
            cursor += e.len;
        }
        let optimizer = match header.optimizer {
            None => {
                if cursor != values.len() as u64 {
                    return Err(CheckpointError::Corrupt(
                        "unexpected optimizer payload".into(),
                    ));
                }
                None
            }
            Some(mut opt) => {
                if cursor * 3 != values.len() as u64 {
                    return Err(CheckpointError::Corrupt("optimizer payload length".into()));
                }
                let take = |cursor: &mut u64| -> Vec<Vec<f64>> {
                    header
                        .tensors
                        .iter()
                        .map(|e| {
                            let s = *cursor as usize;
                            *cursor += e.len;
                            values[s..s + e.len as usize].to_vec()
                        })
                        .collect()
                };
                opt.m = take(&mut cursor);
                opt.v = take(&mut cursor);
                Some(opt)
            }
        };
        let ckpt = Self {
            config: header.config,
            vocab,
            params,
            embedding_frozen: header.embedding_frozen,
            optimizer,
            meta: header.meta,
        };
        if ckpt.config.vocab_size != ckpt.vocab.len() {
            return Err(CheckpointError::Corrupt(format!(
                "config vocab_size {} vs {} stored words",
                ckpt.config.vocab_size,
                ckpt.vocab.len()
            )));
        }
        // Validates the shape table against the config.
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::text::build_vocab;

    fn sample(with_opt: bool) -> Checkpoint {
        let words: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let vocab = build_vocab([words], 1);
        let cfg = ModelConfig {
            num_layers: 1,
            num_heads: 2,
            embed_dim: 4,
            gru_hidden: 4,
            vocab_size: vocab.len(),
            ..Default::default()
        };
        let model = Model::with_random_embeddings(cfg).unwrap();
        let opt = with_opt.then(|| AdamState::new(model.params(), 1e-3));
        Checkpoint::from_model(&model, &vocab, opt.as_ref(), TrainingMeta::default())
    }

    #[test]
    fn byte_stable_roundtrip() {
        for with_opt in [false, true] {
            let c = sample(with_opt);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn structured_errors() {
        let bytes = sample(true).to_bytes();
        for cut in [3, 15, 40, bytes.len() - 1] {
            assert!(
                matches!(
                    Checkpoint::from_bytes(&bytes[..cut]),
                    Err(CheckpointError::Truncated { .. })
                ),
                "cut at {cut}"
            );
        }
        let mut bumped = bytes.clone();
        bumped[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bumped),
            Err(CheckpointError::Version {
                found: 2,
                expected: 1
            })
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(CheckpointError::Corrupt(_))
        ));
        let mut huge = bytes.clone();
        huge[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::from_bytes(&huge).is_err());
        assert!(matches!(
            Checkpoint::from_bytes(b"not a checkpoint at all"),
            Err(CheckpointError::BadMagic)
        ));
    }
}
