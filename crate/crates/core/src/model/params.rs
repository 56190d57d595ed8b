use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.frozen.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Enters every parameter into `g`: trainable ones as leaves, frozen
    /// ones as constants. The returned vector is indexed by [`ParamId`].
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &frozen)| {
                if frozen {
                    g.constant(t.clone())
                } else {
                    g.leaf(t.clone())
                }
            })
            .collect()
    }

    /// Gradient of each parameter after `g.backward`, zeros where nothing
    /// flowed.
    pub fn collect_grads(&self, g: &Graph, nodes: &[NodeId]) -> Vec<Tensor> {
        self.tensors
            .iter()
            .zip(nodes)
            .map(|(t, &n)| g.grad(n).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerIds {
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruDirectionIds {
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w_h: ParamId,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_h: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub embedding: ParamId,
    pub layers: Vec<AttentionLayerIds>,
    pub forward: GruDirectionIds,
    pub backward: GruDirectionIds,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Glorot-uniform bound for a fan_in×fan_out matrix.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[rows, cols], xavier_bound(rows, cols), rng)
}

/// Registers all parameters for `config` in a fixed order and returns
/// their ids. The embedding table is supplied by the caller.
pub fn build_params<R: Rng>(
    config: &ModelConfig,
    embedding: Tensor,
    rng: &mut R,
) -> (ParamStore, Layout) {
    let d = config.embed_dim;
    let dk = config.head_dim();
    let h = config.direction_hidden();
    let mut store = ParamStore::default();
    let embedding = store.push("embedding", embedding);
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let per_head = |role: &str, store: &mut ParamStore, rng: &mut R| {
            (0..config.num_heads)
                .map(|hd| store.push(format!("layer{l}.head{hd}.{role}"), matrix(d, dk, rng)))
                .collect::<Vec<_>>()
        };
        let w_q = per_head("w_q", &mut store, rng);
        let w_k = per_head("w_k", &mut store, rng);
        let w_v = per_head("w_v", &mut store, rng);
        let w_o = store.push(format!("layer{l}.w_o"), matrix(d, d, rng));
        let ln_gain = store.push(format!("layer{l}.ln_gain"), Tensor::full(&[1, d], 1.0));
        let ln_bias = store.push(format!("layer{l}.ln_bias"), Tensor::zeros(&[1, d]));
        layers.push(AttentionLayerIds {
            w_q,
            w_k,
            w_v,
            w_o,
            ln_gain,
            ln_bias,
        });
    }
    let mut direction = |tag: &str, store: &mut ParamStore| GruDirectionIds {
        w_r: store.push(format!("gru.{tag}.w_r"), matrix(d, h, rng)),
        w_z: store.push(format!("gru.{tag}.w_z"), matrix(d, h, rng)),
        w_h: store.push(format!("gru.{tag}.w_h"), matrix(d, h, rng)),
        u_r: store.push(format!("gru.{tag}.u_r"), matrix(h, h, rng)),
        u_z: store.push(format!("gru.{tag}.u_z"), matrix(h, h, rng)),
        u_h: store.push(format!("gru.{tag}.u_h"), matrix(h, h, rng)),
        b_r: store.push(format!("gru.{tag}.b_r"), Tensor::zeros(&[1, h])),
        b_z: store.push(format!("gru.{tag}.b_z"), Tensor::zeros(&[1, h])),
        b_h: store.push(format!("gru.{tag}.b_h"), Tensor::zeros(&[1, h])),
    };
    let forward = direction("fwd", &mut store);
    let backward = direction("bwd", &mut store);
    let head_w = store.push("head.w", matrix(config.gru_hidden, 1, rng));
    let head_b = store.push("head.b", Tensor::zeros(&[1, 1]));
    (
        store,
        Layout {
            embedding,
            layers,
            forward,
            backward,
            head_w,
            head_b,
        },
    )
}
