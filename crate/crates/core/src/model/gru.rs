//! Gated recurrent units and the bidirectional encoder built from them.
//!
//! Row-vector convention: inputs are B×D, hidden states B×h, and each gate
//! is `σ(a·W + h·U + b)`. The update is the standard
//! `h_t = z ⊙ h_{t−1} + (1 − z) ⊙ h̃`.

use crate::autodiff::{Graph, NodeId};
use crate::tensor::{Tensor, TensorError};

/// One direction's parameters laid out for the batched recurrence:
/// `w = [W_r | W_z | W_h]` (D×3h), `b = [b_r | b_z | b_h]` (1×3h),
/// `u_rz = [U_r | U_z]` (h×2h) and `u_h` (h×h).
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub w: NodeId,
    pub b: NodeId,
    pub u_rz: NodeId,
    pub u_h: NodeId,
    pub hidden: usize,
}

impl GruNodes {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        g: &mut Graph,
        w_r: NodeId,
        w_z: NodeId,
        w_h: NodeId,
        u_r: NodeId,
        u_z: NodeId,
        u_h: NodeId,
        b_r: NodeId,
        b_z: NodeId,
        b_h: NodeId,
    ) -> Result<Self, TensorError> {
        let hidden = g.value(u_h).rows();
        Ok(Self {
            w: g.concat(&[w_r, w_z, w_h], 1)?,
            b: g.concat(&[b_r, b_z, b_h], 1)?,
            u_rz: g.concat(&[u_r, u_z], 1)?,
            u_h,
            hidden,
        })
    }

    /// `a·W + b` for every row of `a`; the input half of all three gates.
    pub fn project(&self, g: &mut Graph, a: NodeId) -> Result<NodeId, TensorError> {
        let xw = g.matmul(a, self.w)?;
        g.add_row(xw, self.b)
    }
}

/// One recurrence step given the projected input `a·W + b` (B×3h).
pub fn gru_step(
    g: &mut Graph,
    projected: NodeId,
    h_prev: NodeId,
    p: &GruNodes,
) -> Result<NodeId, TensorError> {
    let h = p.hidden;
    let hu = g.matmul(h_prev, p.u_rz)?;
    let x_rz = g.slice(projected, 1, 0, 2 * h)?;
    let pre_rz = g.add(x_rz, hu)?;
    let rz = g.sigmoid(pre_rz);
    let r = g.slice(rz, 1, 0, h)?;
    let z = g.slice(rz, 1, h, 2 * h)?;
    let reset = g.mul(r, h_prev)?;
    let ru = g.matmul(reset, p.u_h)?;
    let x_h = g.slice(projected, 1, 2 * h, 3 * h)?;
    let pre_h = g.add(x_h, ru)?;
    let cand = g.tanh(pre_h);
    // z⊙h + (1−z)⊙h̃ == h̃ + z⊙(h − h̃)
    let diff = g.sub(h_prev, cand)?;
    let gated = g.mul(z, diff)?;
    g.add(cand, gated)
}

/// A full GRU cell: `a_t` is B×D, `h_prev` B×h.
pub fn gru_cell(
    g: &mut Graph,
    a_t: NodeId,
    h_prev: NodeId,
    p: &GruNodes,
) -> Result<NodeId, TensorError> {
    let projected = p.project(g, a_t)?;
    gru_step(g, projected, h_prev, p)
}

fn run_direction(
    g: &mut Graph,
    projected: NodeId,
    seq_len: usize,
    lengths: &[usize],
    p: &GruNodes,
    reverse: bool,
) -> Result<NodeId, TensorError> {
    let batch = lengths.len();
    let mut h = g.constant(Tensor::zeros(&[batch, p.hidden]));
    let steps = lengths.iter().copied().max().unwrap_or(0);
    for t in 0..steps {
        let rows: Vec<usize> = lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| {
                let pos = match (reverse, t < len) {
                    (_, false) => 0,
                    (false, true) => t,
                    (true, true) => len - 1 - t,
                };
                b * seq_len + pos
            })
            .collect();
        let x_t = g.gather_rows(projected, &rows)?;
        let next = gru_step(g, x_t, h, p)?;
        let active: Vec<bool> = lengths.iter().map(|&len| t < len).collect();
        h = if active.iter().all(|&a| a) {
            next
        } else {
            g.blend_rows(next, h, &active)?
        };
    }
    Ok(h)
}

/// Bidirectional GRU over a stacked (batch·seq)×D input. Sequence `b`
/// occupies rows `b·seq .. b·seq + lengths[b]`; padded rows are never read.
/// Returns B×2h: forward final state then backward final state.
pub fn bigru(
    g: &mut Graph,
    x: NodeId,
    seq_len: usize,
    lengths: &[usize],
    forward: &GruNodes,
    backward: &GruNodes,
) -> Result<NodeId, TensorError> {
    if lengths.is_empty() || lengths.iter().any(|&l| l == 0 || l > seq_len) {
        return Err(TensorError::Invalid {
            op: "bigru",
            reason: format!("lengths {lengths:?} must lie in 1..={seq_len}"),
        });
    }
    if g.value(x).rows() != lengths.len() * seq_len {
        return Err(TensorError::Invalid {
            op: "bigru",
            reason: format!(
                "{} rows for {} sequences of {seq_len}",
                g.value(x).rows(),
                lengths.len()
            ),
        });
    }
    let pf = forward.project(g, x)?;
    let hf = run_direction(g, pf, seq_len, lengths, forward, false)?;
    let pb = backward.project(g, x)?;
    let hb = run_direction(g, pb, seq_len, lengths, backward, true)?;
    g.concat(&[hf, hb], 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_nodes(g: &mut Graph, d: usize, h: usize) -> GruNodes {
        let mut z = |r, c| g.constant(Tensor::zeros(&[r, c]));
        let (w_r, w_z, w_h) = (z(d, h), z(d, h), z(d, h));
        let (u_r, u_z, u_h) = (z(h, h), z(h, h), z(h, h));
        let (b_r, b_z, b_h) = (z(1, h), z(1, h), z(1, h));
        GruNodes::assemble(g, w_r, w_z, w_h, u_r, u_z, u_h, b_r, b_z, b_h).unwrap()
    }

    #[test]
    fn zero_params_from_zero_state() {
        let mut g = Graph::new();
        let p = zero_nodes(&mut g, 3, 2);
        let a = g.constant(Tensor::row(&[0.4, -1.0, 2.0]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let h1 = gru_cell(&mut g, a, h0, &p).unwrap();
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_params_halve_state() {
        let mut g = Graph::new();
        let p = zero_nodes(&mut g, 3, 2);
        let a = g.constant(Tensor::row(&[0.4, -1.0, 2.0]));
        let h0 = g.constant(Tensor::row(&[0.8, -3.0]));
        let h1 = gru_cell(&mut g, a, h0, &p).unwrap();
        assert_eq!(g.value(h1).data(), &[0.4, -1.5]);
    }

    #[test]
    fn bigru_rejects_zero_length() {
        let mut g = Graph::new();
        let f = zero_nodes(&mut g, 2, 2);
        let x = g.constant(Tensor::zeros(&[3, 2]));
        assert!(bigru(&mut g, x, 3, &[0], &f, &f).is_err());
        assert!(bigru(&mut g, x, 3, &[4], &f, &f).is_err());
        let out = bigru(&mut g, x, 3, &[1], &f, &f).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 4]);
    }
}
