//! Reverse-mode automatic differentiation over an arena of tensor nodes.
//!
//! Every operation appends a node to a [`Graph`]; node ids are handed out in
//! creation order, so the arena is already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Gradients accumulate
//! additively, which handles fan-out without special casing.
//!
//! A graph is built for one forward pass and dropped afterwards. Persistent
//! parameters live outside (see [`crate::model::ParamStore`]) and enter as
//! leaves.

use crate::tensor::{gemm, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `y = scale * x + shift`; only the scale matters for the gradient.
    Affine(NodeId, f64),
    AddRow(NodeId, NodeId),
    MulConst(NodeId, Vec<f64>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Softmax(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    GatherRows {
        input: NodeId,
        indices: Vec<usize>,
    },
    BlendRows {
        new: NodeId,
        old: NodeId,
        take_new: Vec<bool>,
    },
    LayerNorm {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    AttnScores {
        q: NodeId,
        k: NodeId,
        dims: HeadDims,
        scale: f64,
    },
    AttnMix {
        p: NodeId,
        v: NodeId,
        dims: HeadDims,
    },
    Bce {
        input: NodeId,
        labels: Vec<f64>,
    },
}

/// Layout of a batched multi-head computation: `batch` sequences of `seq`
/// positions each, features split into `heads` contiguous column blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Clamp floor for probabilities inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Strided gemm view: element (r, c) lives at `offset + r*rs + c*cs`.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c[cv] += a[av] · b[bv]` for an m×k by k×n product.
#[allow(clippy::too_many_arguments)]
fn gemm_view(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    c: &mut [f64],
    cv: View,
    alpha: f64,
) {
    assert!(av.last(m, k) < a.len() && bv.last(k, n) < b.len() && cv.last(m, n) < c.len());
    // SAFETY: the asserts above bound every addressed element.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            1.0,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated on `id` by the last [`backward`](Self::backward),
    /// or `None` if nothing flowed into it.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn zip(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.affine(a, factor, 0.0)
    }

    /// `scale * a + shift`, e.g. `affine(z, -1.0, 1.0)` is `1 - z`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        self.map(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    /// Multiplies by a fixed same-shape tensor (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, factor: Vec<f64>) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        if factor.len() != t.len() {
            return Err(TensorError::Invalid {
                op: "mul_const",
                reason: format!("factor length {} for shape {:?}", factor.len(), t.shape()),
            });
        }
        let data = t.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MulConst(a, factor), rg))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = ta.dims2("add_row")?;
        if tr.len() != n {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for r in 0..m {
            for (x, b) in data[r * n..(r + 1) * n].iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.masked_softmax_rows(a, None)
    }

    /// Row-wise softmax where entries with `keep[i] == false` are treated as
    /// −∞: they come out exactly zero and carry no gradient. Every row must
    /// keep at least one entry.
    pub fn masked_softmax_rows(
        &mut self,
        a: NodeId,
        keep: Option<&[bool]>,
    ) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("softmax_rows")?;
        if let Some(k) = keep {
            if k.len() != m * n {
                return Err(TensorError::Invalid {
                    op: "softmax_rows",
                    reason: format!("mask length {} for {m}×{n}", k.len()),
                });
            }
        }
        let kept = |i: usize| keep.is_none_or(|k| k[i]);
        let x = t.data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let base = r * n;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                let v = x[base + j];
                if v.is_nan() {
                    return Err(TensorError::NonFinite { op: "softmax_rows" });
                }
                if kept(base + j) && v > max {
                    max = v;
                }
            }
            if !max.is_finite() {
                return Err(if max == f64::NEG_INFINITY {
                    TensorError::Invalid {
                        op: "softmax_rows",
                        reason: format!("row {r} has no unmasked entry"),
                    }
                } else {
                    TensorError::NonFinite { op: "softmax_rows" }
                });
            }
            let mut total = 0.0;
            for j in 0..n {
                if kept(base + j) {
                    let e = (x[base + j] - max).exp();
                    out[base + j] = e;
                    total += e;
                }
            }
            for v in &mut out[base..base + n] {
                *v /= total;
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Concatenates 2-d tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        let first = *inputs.first().ok_or(TensorError::Invalid {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        if axis > 1 {
            return Err(TensorError::Invalid {
                op: "concat",
                reason: format!("axis {axis}"),
            });
        }
        let (r0, c0) = self.value(first).dims2("concat")?;
        let mut total = 0;
        for &id in inputs {
            let t = self.value(id);
            let (r, c) = t.dims2("concat")?;
            if (axis == 1 && r != r0) || (axis == 0 && c != c0) {
                return Err(mismatch("concat", self.value(first), t));
            }
            total += if axis == 1 { c } else { r };
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &id in inputs {
                data.extend_from_slice(self.value(id).data());
            }
            Tensor::new(vec![total, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for r in 0..r0 {
                for &id in inputs {
                    data.extend_from_slice(self.value(id).row_slice(r));
                }
            }
            Tensor::new(vec![r0, total], data)?
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open slice `[start, end)` along `axis` of a 2-d tensor.
    pub fn slice(
        &mut self,
        a: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("slice")?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || start >= end || end > extent {
            return Err(TensorError::Invalid {
                op: "slice",
                reason: format!("range {start}..{end} on axis {axis} of {m}×{n}"),
            });
        }
        let out = if axis == 0 {
            Tensor::new(vec![end - start, n], t.data()[start * n..end * n].to_vec())?
        } else {
            let mut data = Vec::with_capacity(m * (end - start));
            for r in 0..m {
                data.extend_from_slice(&t.row_slice(r)[start..end]);
            }
            Tensor::new(vec![m, end - start], data)?
        };
        let rg = self.rg(&[a]);
        Ok(self.push(
            out,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Selects rows by index; repeated indices scatter-add on the way back.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("gather_rows")?;
        if indices.is_empty() {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                reason: "no indices".into(),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    reason: format!("row {i} out of {m}"),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![indices.len(), n], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            out,
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row `r` of the result is `new[r]` when `take_new[r]`, else `old[r]`.
    pub fn blend_rows(
        &mut self,
        new: NodeId,
        old: NodeId,
        take_new: &[bool],
    ) -> Result<NodeId, TensorError> {
        let (tn, to) = (self.value(new), self.value(old));
        if tn.shape() != to.shape() {
            return Err(mismatch("blend_rows", tn, to));
        }
        let (m, n) = tn.dims2("blend_rows")?;
        if take_new.len() != m {
            return Err(TensorError::Invalid {
                op: "blend_rows",
                reason: format!("{} flags for {m} rows", take_new.len()),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for (r, &pick) in take_new.iter().enumerate() {
            let src = if pick { tn } else { to };
            data.extend_from_slice(src.row_slice(r));
        }
        let out = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[new, old]);
        Ok(self.push(
            out,
            Op::BlendRows {
                new,
                old,
                take_new: take_new.to_vec(),
            },
            rg,
        ))
    }

    /// Layer normalization over the feature axis with 1×n gain and bias.
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let (t, g, b) = (self.value(a), self.value(gain), self.value(bias));
        let (m, n) = t.dims2("layer_norm")?;
        if g.len() != n || b.len() != n {
            return Err(mismatch("layer_norm", t, g));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = t.row_slice(r);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn check_heads(
        &self,
        op: &'static str,
        x: NodeId,
        dims: HeadDims,
    ) -> Result<usize, TensorError> {
        let t = self.value(x);
        let (rows, width) = t.dims2(op)?;
        if rows != dims.batch * dims.seq || dims.heads == 0 || width % dims.heads != 0 {
            return Err(TensorError::Invalid {
                op,
                reason: format!("{rows}×{width} does not fit {dims:?}"),
            });
        }
        Ok(width)
    }

    /// Per sequence and head, `scale · Q_bh K_bhᵀ`. `q` and `k` are
    /// (batch·seq)×width with heads as column blocks; the result stacks the
    /// seq×seq score blocks as (batch·heads·seq)×seq, ordered `(b, h, i)`.
    pub fn attn_scores(
        &mut self,
        q: NodeId,
        k: NodeId,
        dims: HeadDims,
        scale: f64,
    ) -> Result<NodeId, TensorError> {
        let width = self.check_heads("attn_scores", q, dims)?;
        if self.value(k).shape() != self.value(q).shape() {
            return Err(mismatch("attn_scores", self.value(q), self.value(k)));
        }
        let HeadDims { batch, seq, heads } = dims;
        let dk = width / heads;
        let mut out = vec![0.0; batch * heads * seq * seq];
        let (qd, kd) = (self.value(q).data(), self.value(k).data());
        for b in 0..batch {
            for h in 0..heads {
                let src = b * seq * width + h * dk;
                gemm_view(
                    seq,
                    dk,
                    seq,
                    qd,
                    View {
                        offset: src,
                        rs: width,
                        cs: 1,
                    },
                    kd,
                    View {
                        offset: src,
                        rs: 1,
                        cs: width,
                    },
                    &mut out,
                    View {
                        offset: (b * heads + h) * seq * seq,
                        rs: seq,
                        cs: 1,
                    },
                    scale,
                );
            }
        }
        let out = Tensor::new(vec![batch * heads * seq, seq], out)?;
        let rg = self.rg(&[q, k]);
        Ok(self.push(out, Op::AttnScores { q, k, dims, scale }, rg))
    }

    /// Applies stacked attention maps (layout of [`attn_scores`](Self::attn_scores))
    /// to values `v`, writing head `h` into column block `h` of the output.
    pub fn attn_mix(
        &mut self,
        p: NodeId,
        v: NodeId,
        dims: HeadDims,
    ) -> Result<NodeId, TensorError> {
        let width = self.check_heads("attn_mix", v, dims)?;
        let HeadDims { batch, seq, heads } = dims;
        if self.value(p).shape() != [batch * heads * seq, seq] {
            return Err(mismatch("attn_mix", self.value(p), self.value(v)));
        }
        let dk = width / heads;
        let mut out = vec![0.0; batch * seq * width];
        let (pd, vd) = (self.value(p).data(), self.value(v).data());
        for b in 0..batch {
            for h in 0..heads {
                let blk = b * seq * width + h * dk;
                gemm_view(
                    seq,
                    seq,
                    dk,
                    pd,
                    View {
                        offset: (b * heads + h) * seq * seq,
                        rs: seq,
                        cs: 1,
                    },
                    vd,
                    View {
                        offset: blk,
                        rs: width,
                        cs: 1,
                    },
                    &mut out,
                    View {
                        offset: blk,
                        rs: width,
                        cs: 1,
                    },
                    1.0,
                );
            }
        }
        let out = Tensor::new(vec![batch * seq, width], out)?;
        let rg = self.rg(&[p, v]);
        Ok(self.push(out, Op::AttnMix { p, v, dims }, rg))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, probs: NodeId, labels: &[f64]) -> Result<NodeId, TensorError> {
        let t = self.value(probs);
        if t.len() != labels.len() {
            return Err(TensorError::Invalid {
                op: "bce",
                reason: format!("{} labels for {} scores", labels.len(), t.len()),
            });
        }
        let loss = bce_value(t.data(), labels);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                input: probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    fn accumulate(&mut self, id: NodeId, contrib: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Propagates `∂loss/∂node` to every node reachable from `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.zero_grad();
        if !self.wants(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let mut contribs = Vec::new();
            self.propagate(idx, &grad, &mut contribs);
            self.nodes[idx].grad = Some(grad);
            for (id, c) in contribs {
                self.accumulate(id, c);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], acc: &mut Vec<(NodeId, Vec<f64>)>) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.value(a).dims2("matmul").unwrap();
                let n = out.cols();
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(b).data(), true, &mut da, 0.0);
                    acc.push((a, da));
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(a).data(), true, g, false, &mut db, 0.0);
                    acc.push((b, db));
                }
            }
            Op::Transpose(a) => {
                let a = *a;
                let (m, n) = out.dims2("transpose").unwrap();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[j * m + i] = g[i * n + j];
                    }
                }
                acc.push((a, da));
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                acc.push((a, g.to_vec()));
                acc.push((b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                acc.push((a, g.to_vec()));
                acc.push((b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let d = g
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(g, y)| g * y)
                        .collect();
                    acc.push((a, d));
                }
                if self.wants(b) {
                    let d = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, x)| g * x)
                        .collect();
                    acc.push((b, d));
                }
            }
            Op::Affine(a, s) => {
                let (a, s) = (*a, *s);
                acc.push((a, g.iter().map(|x| x * s).collect()));
            }
            Op::MulConst(a, f) => {
                let d = g.iter().zip(f).map(|(g, f)| g * f).collect();
                let a = *a;
                acc.push((a, d));
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                let n = out.cols();
                if self.wants(row) {
                    let mut dr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (d, x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    acc.push((row, dr));
                }
                acc.push((a, g.to_vec()));
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                let a = *a;
                acc.push((a, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                let a = *a;
                acc.push((a, d));
            }
            Op::Sum(a) => {
                let a = *a;
                let n = self.value(a).len();
                acc.push((a, vec![g[0]; n]));
            }
            Op::Mean(a) => {
                let a = *a;
                let n = self.value(a).len();
                acc.push((a, vec![g[0] / n as f64; n]));
            }
            Op::Softmax(a) => {
                let a = *a;
                let n = out.cols();
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc.push((a, d));
            }
            Op::Concat { inputs, axis } => {
                let inputs = inputs.clone();
                let axis = *axis;
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for id in inputs {
                    let (r, c) = self.value(id).dims2("concat").unwrap();
                    let d = if axis == 0 {
                        let d = g[offset * total..(offset + r) * total].to_vec();
                        offset += r;
                        d
                    } else {
                        let mut d = Vec::with_capacity(rows * c);
                        for row in 0..rows {
                            d.extend_from_slice(&g[row * total + offset..row * total + offset + c]);
                        }
                        offset += c;
                        d
                    };
                    acc.push((id, d));
                }
            }
            Op::Slice { input, axis, start } => {
                let (input, axis, start) = (*input, *axis, *start);
                let (m, n) = self.value(input).dims2("slice").unwrap();
                let mut d = vec![0.0; m * n];
                if axis == 0 {
                    d[start * n..start * n + g.len()].copy_from_slice(g);
                } else {
                    let w = out.cols();
                    for r in 0..m {
                        d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                }
                acc.push((input, d));
            }
            Op::GatherRows { input, indices } => {
                let input = *input;
                let (m, n) = self.value(input).dims2("gather_rows").unwrap();
                let mut d = vec![0.0; m * n];
                for (k, &i) in indices.iter().enumerate() {
                    for (a, b) in d[i * n..(i + 1) * n].iter_mut().zip(&g[k * n..(k + 1) * n]) {
                        *a += b;
                    }
                }
                acc.push((input, d));
            }
            Op::BlendRows { new, old, take_new } => {
                let (new, old) = (*new, *old);
                let n = out.cols();
                let mut dn = vec![0.0; g.len()];
                let mut dold = vec![0.0; g.len()];
                for (r, &pick) in take_new.iter().enumerate() {
                    let dst = if pick { &mut dn } else { &mut dold };
                    dst[r * n..(r + 1) * n].copy_from_slice(&g[r * n..(r + 1) * n]);
                }
                acc.push((new, dn));
                acc.push((old, dold));
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (input, gain, bias) = (*input, *gain, *bias);
                let n = out.cols();
                let gv = self.value(gain).data();
                let mut dx = vec![0.0; g.len()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let xr = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_x = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_x += dh * xr[j];
                        dg[j] += gr[j] * xr[j];
                        db[j] += gr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[r * n + j] = is / n as f64 * (n as f64 * dh - sum_dh - xr[j] * sum_dh_x);
                    }
                }
                acc.push((input, dx));
                acc.push((gain, dg));
                acc.push((bias, db));
            }
            Op::AttnScores { q, k, dims, scale } => {
                let (q, k, dims, scale) = (*q, *k, *dims, *scale);
                let HeadDims { batch, seq, heads } = dims;
                let width = self.value(q).cols();
                let dk = width / heads;
                let mut dq = vec![0.0; batch * seq * width];
                let mut dkk = vec![0.0; batch * seq * width];
                let (qd, kd) = (self.value(q).data(), self.value(k).data());
                for b in 0..batch {
                    for h in 0..heads {
                        let blk = b * seq * width + h * dk;
                        let sv = View {
                            offset: (b * heads + h) * seq * seq,
                            rs: seq,
                            cs: 1,
                        };
                        let xv = View {
                            offset: blk,
                            rs: width,
                            cs: 1,
                        };
                        // dQ = s · dS · K ; dK = s · dSᵀ · Q
                        gemm_view(seq, seq, dk, g, sv, kd, xv, &mut dq, xv, scale);
                        let st = View {
                            offset: sv.offset,
                            rs: 1,
                            cs: seq,
                        };
                        gemm_view(seq, seq, dk, g, st, qd, xv, &mut dkk, xv, scale);
                    }
                }
                acc.push((q, dq));
                acc.push((k, dkk));
            }
            Op::AttnMix { p, v, dims } => {
                let (p, v, dims) = (*p, *v, *dims);
                let HeadDims { batch, seq, heads } = dims;
                let width = self.value(v).cols();
                let dk = width / heads;
                let mut dp = vec![0.0; batch * heads * seq * seq];
                let mut dv = vec![0.0; batch * seq * width];
                let (pd, vd) = (self.value(p).data(), self.value(v).data());
                for b in 0..batch {
                    for h in 0..heads {
                        let blk = b * seq * width + h * dk;
                        let pv = View {
                            offset: (b * heads + h) * seq * seq,
                            rs: seq,
                            cs: 1,
                        };
                        let xv = View {
                            offset: blk,
                            rs: width,
                            cs: 1,
                        };
                        // dP = dO · Vᵀ ; dV = Pᵀ · dO
                        let vt = View {
                            offset: blk,
                            rs: 1,
                            cs: width,
                        };
                        gemm_view(seq, dk, seq, g, xv, vd, vt, &mut dp, pv, 1.0);
                        let pt = View {
                            offset: pv.offset,
                            rs: 1,
                            cs: seq,
                        };
                        gemm_view(seq, seq, dk, pd, pt, g, xv, &mut dv, xv, 1.0);
                    }
                }
                acc.push((p, dp));
                acc.push((v, dv));
            }
            Op::Bce { input, labels } => {
                let input = *input;
                let y = self.value(input).data();
                let n = labels.len() as f64;
                let d = y
                    .iter()
                    .zip(labels)
                    .map(|(&y, &l)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&y) {
                            0.0
                        } else {
                            g[0] * (-l / y + (1.0 - l) / (1.0 - y)) / n
                        }
                    })
                    .collect();
                acc.push((input, d));
            }
        }
    }
}

/// Mean clamped binary cross-entropy; shared by the graph op and the
/// standalone loss in [`crate::train::bce_loss`].
pub(crate) fn bce_value(probs: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&y, &l)| {
            let y = y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(l * y.ln() + (1.0 - l) * (1.0 - y).ln())
        })
        .sum();
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_known_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![2f64.ln(), 0.0, f64::NEG_INFINITY],
        ]));
        // −∞ is a legal unmasked entry as long as the row max is finite.
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y);
        for j in 0..3 {
            assert!(close(v.get(0, j), 1.0 / 3.0, 1e-15));
        }
        assert!(close(v.get(1, 0), 2.0 / 3.0, 1e-15));
        assert!(close(v.get(1, 1), 1.0 / 3.0, 1e-15));
        assert_eq!(v.get(1, 2), 0.0);
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[1.0, f64::NAN]));
        assert!(matches!(
            g.softmax_rows(x),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[3.0, 100.0, -1.0]));
        let y = g
            .masked_softmax_rows(x, Some(&[true, false, true]))
            .unwrap();
        assert_eq!(g.value(y).get(0, 1), 0.0);
        let s: f64 = g.value(y).data().iter().sum();
        assert!(close(s, 1.0, 1e-15));
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).item(), 0.5);
        assert_eq!(g.value(t).item(), 0.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let y = g.leaf(Tensor::scalar(1.5));
        let l = g.add(y, y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn concat_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 5]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 8]);
        assert!(g.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(a), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn binary_ops_check_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 2]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
        assert!(g.matmul(b, b).is_err());
    }

    #[test]
    fn bce_grad_vanishes_once_clamped() {
        let mut g = Graph::new();
        let y = g.leaf(Tensor::row(&[1.0, 0.3]));
        let l = g.bce(y, &[1.0, 0.0]).unwrap();
        g.backward(l).unwrap();
        let d = g.grad(y).unwrap();
        assert_eq!(d.data()[0], 0.0);
        assert!(close(d.data()[1], (1.0 / 0.7) / 2.0, 1e-12));
    }
}
