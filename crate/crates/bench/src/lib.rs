//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sarcattn::model::ModelConfig;
use sarcattn::synthetic::generate;
use sarcattn::train::{init_model, make_batches, prepare, Batch};
use sarcattn::{Model, Tensor};

/// A fresh model for `config` plus one batch of `batch_size` synthetic
/// sentences (5 to 15 tokens).
pub fn model_and_batch(config: ModelConfig, batch_size: usize) -> (Model, Batch) {
    let examples = generate(400, 50, 1).expect("valid synthetic settings");
    let (vocab, data) = prepare(&examples, &config).expect("synthetic text encodes");
    let (model, _) = init_model(config, &vocab, None).expect("valid config");
    let batch = make_batches(&data.train, batch_size, 0, false)
        .expect("non-empty")
        .next()
        .expect("one batch");
    (model, batch)
}

pub fn square(n: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[n, n], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}
