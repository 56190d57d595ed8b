//! Embeddings → stacked multi-head self-attention → BiGRU → sigmoid head.

mod attention;
mod config;
mod gru;
mod params;
mod record;

pub use attention::{
    attention_head, attention_layer, expand_key_mask, LayerNodes, LayerOptions, LN_EPS,
};
pub use config::ModelConfig;
pub use gru::{bigru, gru_cell, gru_step, GruNodes};
pub use params::{
    build_params, xavier_bound, AttentionLayerIds, GruDirectionIds, Layout, ParamId, ParamStore,
};
pub use record::AttentionRecord;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, HeadDims, NodeId};
use crate::tensor::{Tensor, TensorError};
use crate::text::{EmbeddingTable, TokenSequence, PAD};
use crate::train::{Batch, TrainError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("embedding table is {rows}×{cols}, config wants {vocab}×{dim}")]
    EmbeddingShape {
        rows: usize,
        cols: usize,
        vocab: usize,
        dim: usize,
    },
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenId { id: usize, vocab: usize },
    #[error("parameter table does not match config: {0}")]
    ParamTable(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Batch(#[from] Box<TrainError>),
}

/// Salt separating the weight-init stream from the embedding stream.
const WEIGHT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Handles into a graph built by [`Model::forward_graph`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// B×1 probabilities.
    pub probs: NodeId,
    /// Stacked (batch·heads·seq)×seq attention maps, one node per layer.
    pub maps: Vec<NodeId>,
    pub dims: HeadDims,
}

impl ForwardOutput {
    /// Attention maps for batch row `b`, padded to the batch length.
    pub fn record(&self, g: &Graph, b: usize, length: usize) -> AttentionRecord {
        let HeadDims { seq, heads, .. } = self.dims;
        let maps = self
            .maps
            .iter()
            .map(|&node| {
                let all = g.value(node).data();
                (0..heads)
                    .map(|h| {
                        let start = (b * heads + h) * seq * seq;
                        Tensor::new(vec![seq, seq], all[start..start + seq * seq].to_vec())
                            .expect("seq ≥ 1")
                    })
                    .collect()
            })
            .collect();
        AttentionRecord { maps, length }
    }
}

impl Model {
    /// Fresh model with Glorot-uniform weights drawn from `config.seed`.
    pub fn new(config: ModelConfig, embeddings: EmbeddingTable) -> Result<Self, ModelError> {
        config.validate()?;
        let (rows, cols) = (embeddings.vocab_size(), embeddings.dim());
        if rows != config.vocab_size || cols != config.embed_dim {
            return Err(ModelError::EmbeddingShape {
                rows,
                cols,
                vocab: config.vocab_size,
                dim: config.embed_dim,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ WEIGHT_STREAM);
        let trainable = embeddings.trainable || config.fine_tune_embeddings;
        let (mut params, layout) = build_params(&config, embeddings.matrix, &mut rng);
        params.set_frozen(layout.embedding, !trainable);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Random trainable embeddings seeded from the config.
    pub fn with_random_embeddings(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let table = EmbeddingTable::random(config.vocab_size, config.embed_dim, config.seed);
        Self::new(config, table)
    }

    /// Reassembles a model from stored tensors, checking that names and
    /// shapes match what `config` would build.
    pub fn from_parts(
        config: ModelConfig,
        named: Vec<(String, Tensor)>,
        embedding_frozen: bool,
    ) -> Result<Self, ModelError> {
        let mut template = Self::with_random_embeddings(config)?;
        if named.len() != template.params.len() {
            return Err(ModelError::ParamTable(format!(
                "{} tensors stored, {} expected",
                named.len(),
                template.params.len()
            )));
        }
        for (id, (name, tensor)) in template
            .params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(named)
        {
            let want = template.params.get(id);
            if name != template.params.name(id) || tensor.shape() != want.shape() {
                return Err(ModelError::ParamTable(format!(
                    "found {name} {:?}, expected {} {:?}",
                    tensor.shape(),
                    template.params.name(id),
                    want.shape()
                )));
            }
            *template.params.get_mut(id) = tensor;
        }
        let emb = template.layout.embedding;
        template.params.set_frozen(emb, embedding_frozen);
        Ok(template)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn score_scale(&self) -> f64 {
        let width = if self.config.scale_full_dim {
            self.config.embed_dim
        } else {
            self.config.head_dim()
        };
        1.0 / (width as f64).sqrt()
    }

    fn dropout(
        &self,
        g: &mut Graph,
        x: NodeId,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<NodeId, TensorError> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let factor = (0..g.value(x).len())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.mul_const(x, factor)
            }
            _ => Ok(x),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        if batch.seq_len > self.config.max_len {
            return Err(ModelError::TooLong {
                len: batch.seq_len,
                max: self.config.max_len,
            });
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::TokenId {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Embedding lookup and the attention layers: the (batch·seq)×D input
    /// to the recurrent encoder, plus each layer's stacked maps.
    fn attention_stack(
        &self,
        g: &mut Graph,
        nodes: &[NodeId],
        batch: &Batch,
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<(NodeId, Vec<NodeId>, HeadDims), ModelError> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let node = |id: ParamId| nodes[id.index()];
        let dims = HeadDims {
            batch: batch.size(),
            seq: batch.seq_len,
            heads: cfg.num_heads,
        };

        let embedded = g.gather_rows(node(self.layout.embedding), &batch.ids)?;
        let mut x = self.dropout(g, embedded, dropout)?;

        let keep = expand_key_mask(&batch.mask, dims);
        let opts = LayerOptions {
            scale: self.score_scale(),
            residual: !cfg.no_residual,
        };
        let mut maps = Vec::with_capacity(self.layout.layers.len());
        for layer in &self.layout.layers {
            let cat = |g: &mut Graph, ids: &[ParamId]| {
                let ns: Vec<NodeId> = ids.iter().map(|&i| node(i)).collect();
                g.concat(&ns, 1)
            };
            let bound = LayerNodes {
                w_q: cat(g, &layer.w_q)?,
                w_k: cat(g, &layer.w_k)?,
                w_v: cat(g, &layer.w_v)?,
                w_o: node(layer.w_o),
                ln_gain: node(layer.ln_gain),
                ln_bias: node(layer.ln_bias),
            };
            let (out, p) = attention_layer(g, x, &bound, dims, &keep, opts)?;
            maps.push(p);
            x = self.dropout(g, out, dropout)?;
        }
        Ok((x, maps, dims))
    }

    /// Eval-mode output of the attention layers alone for one sentence
    /// (N×D; the embeddings themselves when there are no layers).
    pub fn attention_output(&self, seq: &TokenSequence) -> Result<Tensor, ModelError> {
        let batch = Batch::single(seq).map_err(Box::new)?;
        let mut g = Graph::new();
        let nodes = self.bind_constants(&mut g);
        let (x, _, _) = self.attention_stack(&mut g, &nodes, &batch, &mut None)?;
        Ok(g.value(x).clone())
    }

    /// Records the full forward pass for `batch` on `g`. `nodes` are the
    /// bound parameters (see [`ParamStore::bind`]); passing a dropout RNG
    /// switches on training-mode dropout.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        nodes: &[NodeId],
        batch: &Batch,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput, ModelError> {
        let (x, maps, dims) = self.attention_stack(g, nodes, batch, &mut dropout)?;
        let layout = &self.layout;
        let node = |id: ParamId| nodes[id.index()];

        let direction = |g: &mut Graph, d: &GruDirectionIds| {
            GruNodes::assemble(
                g,
                node(d.w_r),
                node(d.w_z),
                node(d.w_h),
                node(d.u_r),
                node(d.u_z),
                node(d.u_h),
                node(d.b_r),
                node(d.b_z),
                node(d.b_h),
            )
        };
        let fwd = direction(g, &layout.forward)?;
        let bwd = direction(g, &layout.backward)?;
        let encoded = bigru(g, x, batch.seq_len, &batch.lengths, &fwd, &bwd)?;
        let logits = g.matmul(encoded, node(layout.head_w))?;
        let logits = g.add_row(logits, node(layout.head_b))?;
        let probs = g.sigmoid(logits);
        Ok(ForwardOutput { probs, maps, dims })
    }

    /// Probabilities and per-sequence attention records (trimmed to each
    /// sequence's length) for one batch, dropout off.
    pub fn predict_batch(
        &self,
        batch: &Batch,
    ) -> Result<(Vec<f64>, Vec<AttentionRecord>), ModelError> {
        let mut g = Graph::new();
        let nodes = self.bind_constants(&mut g);
        let out = self.forward_graph(&mut g, &nodes, batch, None)?;
        let records = batch
            .lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| out.record(&g, b, len).trimmed())
            .collect();
        Ok((g.value(out.probs).data().to_vec(), records))
    }

    fn bind_constants(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect()
    }

    /// Score in (0, 1) and attention record for one sentence. With a
    /// dropout RNG the pass runs in training mode.
    pub fn forward(
        &self,
        seq: &TokenSequence,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(f64, AttentionRecord), ModelError> {
        let batch = Batch::single(seq).map_err(Box::new)?;
        let mut g = Graph::new();
        let nodes = self.bind_constants(&mut g);
        let out = self.forward_graph(&mut g, &nodes, &batch, dropout)?;
        Ok((g.value(out.probs).item(), out.record(&g, 0, seq.len())))
    }

    /// Eval-mode scores for many sentences, `batch_size` at a time.
    pub fn predict(&self, seqs: &[&TokenSequence]) -> Result<Vec<f64>, ModelError> {
        let mut scores = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(self.config.batch_size.max(1)) {
            let labels = vec![0; chunk.len()];
            let batch = Batch::from_sequences(chunk, &labels).map_err(Box::new)?;
            scores.extend(self.predict_batch(&batch)?.0);
        }
        Ok(scores)
    }

    /// Mean BCE over `batch` and the gradient of every parameter. Frozen
    /// parameters and the PAD embedding row get zero gradient.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let out = self.forward_graph(&mut g, &nodes, batch, dropout)?;
        let loss = g.bce(out.probs, &batch.labels_f64())?;
        g.backward(loss)?;
        let mut grads = self.params.collect_grads(&g, &nodes);
        let emb = &mut grads[self.layout.embedding.index()];
        let d = self.config.embed_dim;
        emb.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
        Ok((g.value(loss).item(), grads))
    }
}
