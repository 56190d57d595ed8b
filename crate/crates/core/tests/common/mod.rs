#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarcattn::gradcheck::max_relative_error;
use sarcattn::model::ModelConfig;
use sarcattn::text::{build_vocab, Vocabulary};
use sarcattn::train::Batch;
use sarcattn::{Graph, Model, TokenSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vocabulary `<pad> <unk> t0 .. t{n-1}`.
pub fn toy_vocab(n: usize) -> Vocabulary {
    let words: Vec<Vec<String>> = vec![(0..n).map(|i| format!("t{i:02}")).collect()];
    build_vocab(words, 1)
}

pub fn random_seq(vocab: &Vocabulary, len: usize, r: &mut ChaCha8Rng) -> TokenSequence {
    let ids = (0..len).map(|_| r.gen_range(2..vocab.len())).collect();
    TokenSequence::from_ids(vocab, ids).unwrap()
}

pub fn small_config(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 2,
        embed_dim: 8,
        gru_hidden: 8,
        vocab_size: vocab.len(),
        ..Default::default()
    }
}

/// Mean BCE of `model` on `batch` with dropout off, no backward pass.
pub fn loss_only(model: &Model, batch: &Batch) -> f64 {
    let mut g = Graph::new();
    let nodes = model.params().bind(&mut g);
    let out = model.forward_graph(&mut g, &nodes, batch, None).unwrap();
    let loss = g.bce(out.probs, &batch.labels_f64()).unwrap();
    g.value(loss).item()
}

/// Worst relative error over every trainable scalar, with the name of the
/// parameter where it occurs.
pub fn model_grad_error(model: &Model, batch: &Batch, eps: f64) -> (f64, String) {
    let (_, analytic) = model.loss_and_grads(batch, None).unwrap();
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.params().is_frozen(id) {
            continue;
        }
        let mut numeric = Vec::with_capacity(analytic[id.index()].len());
        for i in 0..analytic[id.index()].len() {
            let orig = probe.params().get(id).data()[i];
            probe.params_mut().get_mut(id).data_mut()[i] = orig + eps;
            let up = loss_only(&probe, batch);
            probe.params_mut().get_mut(id).data_mut()[i] = orig - eps;
            let down = loss_only(&probe, batch);
            probe.params_mut().get_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let err = max_relative_error(analytic[id.index()].data(), &numeric);
        if err > worst.0 {
            worst = (err, model.params().name(id).to_string());
        }
    }
    worst
}
