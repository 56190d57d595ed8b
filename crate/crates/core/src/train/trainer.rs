use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, bce_loss, make_batches, AdamState, Checkpoint, LabeledSequence, TrainError,
    TrainingMeta,
};
use crate::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{Model, ModelConfig};
use crate::text::{
    build_vocab, load_embeddings, remove_stop_words, tokenize, Example, Split, TextError,
    TokenSequence, Vocabulary,
};

const DROPOUT_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<LabeledSequence>,
    /// Held-out split used for checkpoint selection; may be empty.
    pub test: Vec<LabeledSequence>,
}

/// One line of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train: MetricsReport,
    pub test: Option<MetricsReport>,
    /// Eval-mode BCE on the held-out split.
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint from the epoch with the best held-out F1 (train F1 when
    /// there is no held-out split). Equal F1 goes to the lower held-out
    /// loss, then to the earlier epoch.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Tokenizes, optionally strips stop words, encodes and truncates.
pub fn encode_text(
    text: &str,
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<TokenSequence, TextError> {
    let mut tokens = tokenize(text);
    if config.remove_stop_words {
        tokens = remove_stop_words(tokens);
    }
    let mut seq = vocab.encode(&tokens)?;
    seq.truncate(config.max_len);
    Ok(seq)
}

pub fn encode_examples(
    examples: &[Example],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<LabeledSequence>, TextError> {
    examples
        .iter()
        .map(|ex| {
            Ok(LabeledSequence {
                seq: encode_text(&ex.text, vocab, config)?,
                label: ex.label,
            })
        })
        .collect()
}

/// Builds the vocabulary from the training examples (those marked train or
/// unmarked) and encodes both splits with it.
pub fn prepare(
    examples: &[Example],
    config: &ModelConfig,
) -> Result<(Vocabulary, TrainData), TextError> {
    let (test, train): (Vec<Example>, Vec<Example>) = examples
        .iter()
        .cloned()
        .partition(|e| e.split == Some(Split::Test));
    let tokens = train.iter().map(|e| {
        let t = tokenize(&e.text);
        if config.remove_stop_words {
            remove_stop_words(t)
        } else {
            t
        }
    });
    let vocab = build_vocab(tokens, config.min_count);
    let data = TrainData {
        train: encode_examples(&train, &vocab, config)?,
        test: encode_examples(&test, &vocab, config)?,
    };
    Ok((vocab, data))
}

/// Fresh model over `vocab`, with embeddings read from `embeddings` when
/// given (its dimension overrides `config.embed_dim`) or drawn at random.
/// Returns the file's vocabulary coverage alongside the model.
pub fn init_model(
    mut config: ModelConfig,
    vocab: &Vocabulary,
    embeddings: Option<&std::path::Path>,
) -> Result<(Model, Option<f64>), TrainError> {
    config.vocab_size = vocab.len();
    match embeddings {
        None => Ok((Model::with_random_embeddings(config)?, None)),
        Some(path) => {
            let (table, coverage) = load_embeddings(path, vocab, config.seed)?;
            config.embed_dim = table.dim();
            Ok((Model::new(config, table)?, Some(coverage)))
        }
    }
}

/// Eval-mode metrics of `model` on `data`.
pub fn evaluate(
    model: &Model,
    data: &[LabeledSequence],
    threshold: f64,
) -> Result<MetricsReport, TrainError> {
    Ok(evaluate_with_loss(model, data, threshold)?.0)
}

/// Metrics plus mean BCE.
pub fn evaluate_with_loss(
    model: &Model,
    data: &[LabeledSequence],
    threshold: f64,
) -> Result<(MetricsReport, f64), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let seqs: Vec<&TokenSequence> = data.iter().map(|d| &d.seq).collect();
    let labels: Vec<u8> = data.iter().map(|d| d.label).collect();
    let scores = model.predict(&seqs)?;
    let report = MetricsReport::compute(&scores, &labels, threshold)?;
    let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    Ok((report, bce_loss(&scores, &targets)?))
}

/// Runs `epochs` passes of shuffled mini-batch Adam over `data.train`,
/// evaluating after each epoch and keeping the best checkpoint.
/// Single-threaded and fully determined by `model.config().seed`.
pub fn train(
    mut model: Model,
    vocab: &Vocabulary,
    data: &TrainData,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if epochs == 0 {
        return Err(TrainError::Config("epochs must be at least 1".into()));
    }
    let cfg = model.config().clone();
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut history = Vec::with_capacity(epochs);
    let meta = |epoch, history: &[EpochRecord]| TrainingMeta {
        epoch,
        seed: cfg.seed,
        history: history.to_vec(),
    };
    let mut best = Checkpoint::from_model(&model, vocab, Some(&adam), meta(0, &[]));
    let mut best_epoch = 0;
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);

    for epoch in 1..=epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let batches = make_batches(
            &data.train,
            cfg.batch_size,
            cfg.seed.wrapping_add(epoch as u64),
            true,
        )?;
        for (step, batch) in batches.enumerate() {
            let (loss, mut grads) = model.loss_and_grads(&batch, Some(&mut dropout_rng))?;
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(best.clone()),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            if let Err(e) = adam_step(model.params_mut(), &mut grads, &mut adam) {
                return Err(diverged(e.to_string()));
            }
            loss_sum += loss * batch.size() as f64;
            seen += batch.size();
        }
        let train_report = evaluate(&model, &data.train, DEFAULT_THRESHOLD)?;
        let (test_report, test_loss) = if data.test.is_empty() {
            (None, None)
        } else {
            let (r, l) = evaluate_with_loss(&model, &data.test, DEFAULT_THRESHOLD)?;
            (Some(r), Some(l))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train: train_report,
            test: test_report,
            test_loss,
        };
        on_epoch(&record);
        let f1 = record.test.as_ref().unwrap_or(&record.train).f1;
        let loss = record.test_loss.unwrap_or(record.train_loss);
        let key = (f1, -loss);
        history.push(record);
        if key > best_key {
            best_key = key;
            best_epoch = epoch;
            best = Checkpoint::from_model(&model, vocab, Some(&adam), meta(epoch, &history));
        }
    }
    best.meta.history = history.clone();
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}
