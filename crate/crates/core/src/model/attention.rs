//! Scaled dot-product self-attention, one head or a full multi-head layer.

use crate::autodiff::{Graph, HeadDims, NodeId};
use crate::tensor::{Tensor, TensorError};

/// Layer-norm epsilon inside attention layers.
pub const LN_EPS: f64 = 1e-5;

/// One head over a single N×D sequence: `softmax(QKᵀ·scale)·V` with key
/// columns where `mask` is false forced to zero weight. Returns the N×dk
/// output and the N×N map.
pub fn attention_head(
    g: &mut Graph,
    x: NodeId,
    w_q: NodeId,
    w_k: NodeId,
    w_v: NodeId,
    mask: &[bool],
    scale: f64,
) -> Result<(NodeId, Tensor), TensorError> {
    let n = g.value(x).rows();
    if mask.len() != n || !mask.contains(&true) {
        return Err(TensorError::Invalid {
            op: "attention_head",
            reason: format!("mask of length {} for {n} tokens", mask.len()),
        });
    }
    let q = g.matmul(x, w_q)?;
    let k = g.matmul(x, w_k)?;
    let v = g.matmul(x, w_v)?;
    let dims = HeadDims {
        batch: 1,
        seq: n,
        heads: 1,
    };
    let scores = g.attn_scores(q, k, dims, scale)?;
    let keep: Vec<bool> = (0..n * n).map(|i| mask[i % n]).collect();
    let p = g.masked_softmax_rows(scores, Some(&keep))?;
    let out = g.attn_mix(p, v, dims)?;
    Ok((out, g.value(p).clone()))
}

/// Graph nodes for one attention layer, per-head projections concatenated
/// into D×D blocks (head `h` owns columns `h·dk .. (h+1)·dk`).
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_o: NodeId,
    pub ln_gain: NodeId,
    pub ln_bias: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOptions {
    pub scale: f64,
    pub residual: bool,
}

/// Expands a (batch·seq) key mask to the (batch·heads·seq)×seq layout used
/// by the stacked score blocks.
pub fn expand_key_mask(key_mask: &[bool], dims: HeadDims) -> Vec<bool> {
    let HeadDims { batch, seq, heads } = dims;
    let mut keep = Vec::with_capacity(batch * heads * seq * seq);
    for b in 0..batch {
        let row = &key_mask[b * seq..(b + 1) * seq];
        for _ in 0..heads * seq {
            keep.extend_from_slice(row);
        }
    }
    keep
}

/// Multi-head layer over a stacked (batch·seq)×D input: heads run in
/// parallel, are concatenated, mixed by `W_O`, then (unless disabled)
/// added back to the input and layer-normalized. Returns the output and
/// the stacked attention maps.
pub fn attention_layer(
    g: &mut Graph,
    x: NodeId,
    params: &LayerNodes,
    dims: HeadDims,
    keep: &[bool],
    opts: LayerOptions,
) -> Result<(NodeId, NodeId), TensorError> {
    let q = g.matmul(x, params.w_q)?;
    let k = g.matmul(x, params.w_k)?;
    let v = g.matmul(x, params.w_v)?;
    let scores = g.attn_scores(q, k, dims, opts.scale)?;
    let p = g.masked_softmax_rows(scores, Some(keep))?;
    let mixed = g.attn_mix(p, v, dims)?;
    let projected = g.matmul(mixed, params.w_o)?;
    let out = if opts.residual {
        let summed = g.add(projected, x)?;
        g.layer_norm(summed, params.ln_gain, params.ln_bias, LN_EPS)?
    } else {
        projected
    };
    Ok((out, p))
}
