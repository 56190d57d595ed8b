use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use sarcattn::ablation::{run_ablation, AblationError, EmbeddingSource, SweepAxis, SweepSpec};
use sarcattn::interpret::{export_model_view, render_index};
use sarcattn::synthetic::generate;
use sarcattn::text::{load_dataset, write_dataset, Example, Split, TextError};
use sarcattn::train::{
    encode_examples, encode_text, evaluate, init_model, prepare, train as fit, Batch,
};
use sarcattn::{
    aggregate, render_report, Checkpoint, MetricsReport, Model, ReportFormat, TrainError,
};
use serde::Serialize;

use crate::config::{validate, RunConfig};
use crate::{parse_format, AblateArgs, CliError, EvalArgs, ExplainArgs, GenArgs, SplitArg};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Missing or malformed input data is a usage error; read failures on an
/// existing file are not.
fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    if !path.is_file() {
        return Err(usage(format!("data file not found: {}", path.display())));
    }
    load_dataset(path).map_err(|e| match e {
        TextError::Io { .. } => CliError::Runtime(e.into()),
        other => usage(other.to_string()),
    })
}

fn read_checkpoint(path: &Path) -> Result<(Checkpoint, Model)> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint not found: {}", path.display())));
    }
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = ckpt
        .to_model()
        .context("rebuilding model from checkpoint")?;
    Ok((ckpt, model))
}

/// The train file plus, when given, the test file with every line forced
/// into the test split.
fn load_examples(cfg: &RunConfig) -> Result<Vec<Example>> {
    let train = cfg.data.train.as_deref().expect("validated");
    let mut examples = read_dataset(train)?;
    if let Some(test) = cfg.data.test.as_deref() {
        examples.extend(read_dataset(test)?.into_iter().map(|mut ex| {
            ex.split = Some(Split::Test);
            ex
        }));
    }
    Ok(examples)
}

fn prepare_error(e: TrainError) -> CliError {
    match e {
        TrainError::Text(t) => usage(t.to_string()),
        other => CliError::Runtime(other.into()),
    }
}

#[derive(Serialize)]
struct FinalMetrics<'a> {
    split: &'static str,
    best_epoch: usize,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

pub fn train(flags: &crate::config::RunFlags) -> Result<()> {
    let cfg = flags.resolve()?;
    validate(&cfg)?;
    let out = cfg.data.out.clone().expect("validated");
    let examples = load_examples(&cfg)?;
    let (vocab, data) = prepare(&examples, &cfg.model).map_err(|e| usage(e.to_string()))?;
    if data.train.is_empty() {
        return Err(usage(
            "no training examples (every line is in the test split)",
        ));
    }
    let (model, coverage) = init_model(cfg.model.clone(), &vocab, cfg.data.embeddings.as_deref())
        .map_err(|e| match e {
        TrainError::Model(m) => usage(m.to_string()),
        other => prepare_error(other),
    })?;
    eprintln!(
        "vocabulary {} words, {} train / {} test examples, {} parameters",
        vocab.len(),
        data.train.len(),
        data.test.len(),
        model.num_parameters()
    );
    if let Some(c) = coverage {
        eprintln!("embedding coverage {:.1}%", 100.0 * c);
    }

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut resolved = cfg.clone();
    resolved.model = model.config().clone();
    resolved
        .data
        .make_absolute()
        .context("resolving data paths")?;
    write_file(&out.join("config.toml"), &resolved.to_toml())?;

    let metrics_path = out.join("metrics.jsonl");
    let mut log = BufWriter::new(
        File::create(&metrics_path)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    let mut log_err = None;
    let epochs = cfg.model.epochs;
    let outcome = fit(model, &vocab, &data, epochs, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        let held = rec
            .test
            .as_ref()
            .map_or(String::new(), |t| format!(", test f1 {:.4}", t.f1));
        eprintln!(
            "epoch {}/{epochs}: loss {:.4}, train acc {:.4}{held}",
            rec.epoch, rec.train_loss, rec.train.accuracy
        );
    });
    if let Some(e) = log_err {
        return Err(anyhow::Error::new(e)
            .context(format!("writing {}", metrics_path.display()))
            .into());
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged {
            epoch,
            step,
            reason,
            last_good,
        }) => {
            let path = out.join("last_good.ckpt");
            last_good
                .save(&path)
                .with_context(|| format!("saving {}", path.display()))?;
            return Err(CliError::Runtime(anyhow::anyhow!(
                "training diverged at epoch {epoch}, step {step}: {reason}; last good checkpoint (epoch {}) saved to {}",
                last_good.meta.epoch,
                path.display()
            )));
        }
        Err(e) => return Err(CliError::Runtime(e.into())),
    };

    let ckpt_path = out.join("model.ckpt");
    outcome
        .best
        .save(&ckpt_path)
        .with_context(|| format!("saving {}", ckpt_path.display()))?;
    let best = outcome.best.to_model().context("rebuilding best model")?;
    let (split, eval_set) = if data.test.is_empty() {
        ("train", &data.train)
    } else {
        ("test", &data.test)
    };
    let report =
        evaluate(&best, eval_set, sarcattn::DEFAULT_THRESHOLD).context("final evaluation")?;
    let summary = FinalMetrics {
        split,
        best_epoch: outcome.best_epoch,
        report: &report,
    };
    write_file(
        &out.join("final_metrics.json"),
        &serde_json::to_string_pretty(&summary).expect("report serializes"),
    )?;
    eprintln!("best epoch {} ({split}): {report}", outcome.best_epoch);
    println!("{}", ckpt_path.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!(
            "threshold must lie in [0, 1], got {}",
            a.threshold
        )));
    }
    let (ckpt, model) = read_checkpoint(&a.checkpoint)?;
    let examples: Vec<Example> = read_dataset(&a.data)?
        .into_iter()
        .filter(|ex| match a.split {
            SplitArg::All => true,
            SplitArg::Test => ex.split == Some(Split::Test),
            SplitArg::Train => ex.split != Some(Split::Test),
        })
        .collect();
    if examples.is_empty() {
        return Err(usage("no examples in the selected split"));
    }
    let data =
        encode_examples(&examples, &ckpt.vocab, &ckpt.config).map_err(|e| usage(e.to_string()))?;
    let report = evaluate(&model, &data, a.threshold).context("evaluating")?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    eprintln!("{report}");
    println!("{json}");
    Ok(())
}

/// Sentences from `--file`: JSON-lines records contribute their `text`,
/// anything else is taken as a raw line.
fn read_sentences(path: &Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Err(usage(format!("input file not found: {}", path.display())));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<Example>(l).map_or_else(|_| l.to_string(), |ex| ex.text))
        .collect())
}

struct Explained {
    report: String,
    score: f64,
    view: String,
}

fn explain_one(
    model: &Model,
    ckpt: &Checkpoint,
    text: &str,
    format: ReportFormat,
) -> Result<Explained> {
    let seq = match encode_text(text, &ckpt.vocab, &ckpt.config) {
        Err(TextError::EmptySequence) => {
            return Err(usage(format!("no tokens in input text {text:?}")))
        }
        other => other.map_err(|e| usage(e.to_string()))?,
    };
    let batch = Batch::single(&seq).context("building batch")?;
    let (scores, records) = model.predict_batch(&batch).context("scoring")?;
    let attrs = aggregate(&records[0], seq.words());
    let report = render_report(&seq, &attrs, scores[0], format).context("rendering report")?;
    Ok(Explained {
        report,
        score: scores[0],
        view: export_model_view(&records[0], seq.words()),
    })
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let format = parse_format(&a.format)?;
    if let Some(text) = &a.text {
        if text.trim().is_empty() {
            return Err(usage("input text is empty"));
        }
        let (ckpt, model) = read_checkpoint(&a.checkpoint)?;
        let done = explain_one(&model, &ckpt, text, format)?;
        match &a.out {
            Some(p) => write_file(p, &done.report)?,
            None => print!("{}", done.report),
        }
        if let Some(p) = &a.model_view {
            write_file(p, &done.view)?;
        }
        return Ok(());
    }

    let file = a.file.as_deref().expect("clap requires --text or --file");
    let dir = a
        .out
        .as_deref()
        .ok_or_else(|| usage("--file needs --out <DIR>"))?;
    let sentences = read_sentences(file)?;
    if sentences.is_empty() {
        return Err(usage(format!("no sentences in {}", file.display())));
    }
    let (ckpt, model) = read_checkpoint(&a.checkpoint)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut index = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let done = explain_one(&model, &ckpt, s, format)?;
        let name = format!("report_{i:04}.{}", format.extension());
        write_file(&dir.join(&name), &done.report)?;
        index.push((name, s.clone(), done.score));
    }
    write_file(&dir.join("index.html"), &render_index(&index))?;
    eprintln!("wrote {} reports to {}", index.len(), dir.display());
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = a.run.resolve()?;
    let from_flags = SweepSpec {
        layers: a.sweep_layers.clone(),
        heads: a.sweep_heads.clone(),
        embeddings: a.sweep_embeddings.clone(),
    };
    if from_flags != SweepSpec::default() {
        cfg.ablate = from_flags;
    }
    let axis = cfg.ablate.axis().map_err(|e| usage(e.to_string()))?;
    validate(&cfg)?;
    if let SweepAxis::Embeddings(sources) = &axis {
        for s in sources {
            if let EmbeddingSource::File(p) = s {
                if !p.is_file() {
                    return Err(usage(format!("embedding file not found: {}", p.display())));
                }
            }
        }
    }
    let out = cfg.data.out.clone().expect("validated");
    let examples = load_examples(&cfg)?;
    let epochs = cfg.model.epochs;
    let table = run_ablation(
        &cfg.model,
        cfg.data.embeddings.as_deref(),
        &examples,
        &axis,
        epochs,
        |row, rec| {
            eprintln!(
                "{} #{}: epoch {}/{epochs}, loss {:.4}",
                axis.name(),
                row + 1,
                rec.epoch,
                rec.train_loss
            )
        },
    )
    .map_err(|e| match e {
        AblationError::Run {
            source: TrainError::Model(_),
            ..
        }
        | AblationError::AxisCount(_)
        | AblationError::NoValues(_) => usage(e.to_string()),
        AblationError::Train(t) => prepare_error(t),
        other => CliError::Runtime(other.into()),
    })?;
    let md = table.to_markdown();
    write_file(&out.join("ablation.md"), &md)?;
    write_file(
        &out.join("ablation.json"),
        &serde_json::to_string_pretty(&table).expect("table serializes"),
    )?;
    print!("{md}");
    Ok(())
}

pub fn gen_synthetic(a: &GenArgs) -> Result<()> {
    let examples = generate(a.n, a.vocab_size, a.seed).map_err(|e| usage(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_dataset(&a.out, &examples).context("writing dataset")?;
    eprintln!("wrote {} examples to {}", examples.len(), a.out.display());
    Ok(())
}
