//! One-axis sweeps over layer count, head count, or embedding source, with
//! every run sharing the base config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::text::Example;
use crate::train::{init_model, prepare, train, EpochRecord, TrainError};

/// Values to sweep. Exactly one field may be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub layers: Option<Vec<usize>>,
    pub heads: Option<Vec<usize>>,
    /// `"random"` or a path to a text embedding file.
    pub embeddings: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Layers(Vec<usize>),
    Heads(Vec<usize>),
    Embeddings(Vec<EmbeddingSource>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    Random,
    File(PathBuf),
}

impl EmbeddingSource {
    pub fn parse(s: &str) -> Self {
        if s == "random" {
            EmbeddingSource::Random
        } else {
            EmbeddingSource::File(PathBuf::from(s))
        }
    }

    fn label(&self) -> String {
        match self {
            EmbeddingSource::Random => "random".into(),
            EmbeddingSource::File(p) => p.file_name().map_or_else(
                || p.display().to_string(),
                |f| f.to_string_lossy().into_owned(),
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("sweep must vary exactly one of layers, heads, embeddings; got {0}")]
    AxisCount(String),
    #[error("sweep over {0} lists no values")]
    NoValues(&'static str),
    #[error("{axis}={value}: {source}")]
    Run {
        axis: &'static str,
        value: String,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl SweepSpec {
    pub fn axis(&self) -> Result<SweepAxis, AblationError> {
        let set: Vec<&str> = [
            ("layers", self.layers.is_some()),
            ("heads", self.heads.is_some()),
            ("embeddings", self.embeddings.is_some()),
        ]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect();
        if set.len() != 1 {
            let got = if set.is_empty() {
                "none".to_string()
            } else {
                set.join(" and ")
            };
            return Err(AblationError::AxisCount(got));
        }
        let axis = if let Some(v) = &self.layers {
            SweepAxis::Layers(v.clone())
        } else if let Some(v) = &self.heads {
            SweepAxis::Heads(v.clone())
        } else {
            let v = self.embeddings.as_ref().expect("one axis set");
            SweepAxis::Embeddings(v.iter().map(|s| EmbeddingSource::parse(s)).collect())
        };
        if axis.is_empty() {
            return Err(AblationError::NoValues(axis.name()));
        }
        Ok(axis)
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Layers(_) => "layers",
            SweepAxis::Heads(_) => "heads",
            SweepAxis::Embeddings(_) => "embeddings",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Layers(v) | SweepAxis::Heads(v) => v.len(),
            SweepAxis::Embeddings(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> String {
        match self {
            SweepAxis::Layers(v) => match v[i] {
                0 => "0 (GRU only)".into(),
                1 => "1 Layer".into(),
                n => format!("{n} Layers"),
            },
            SweepAxis::Heads(v) => match v[i] {
                1 => "1 Head".into(),
                n => format!("{n} Heads"),
            },
            SweepAxis::Embeddings(v) => v[i].label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub seed: u64,
    pub epochs: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Precision, recall and F1 as percentages with one decimal.
    pub fn to_markdown(&self) -> String {
        let header = match self.axis.as_str() {
            "layers" => "#L - Layers",
            "heads" => "#H - Heads",
            _ => "Embeddings",
        };
        let mut out = format!("| {header} | Precision | Recall | F1 |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} |",
                r.value,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1
            );
        }
        out
    }

    pub fn f1_of(&self, value: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.value == value).map(|r| r.f1)
    }
}

/// Trains one model per sweep value on `examples` and reports held-out
/// metrics of the best checkpoint. Layer and head sweeps use `embeddings`
/// (random when `None`). `on_epoch` sees the row index too.
pub fn run_ablation(
    base: &ModelConfig,
    embeddings: Option<&Path>,
    examples: &[Example],
    axis: &SweepAxis,
    epochs: usize,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<AblationTable, AblationError> {
    if axis.is_empty() {
        return Err(AblationError::NoValues(axis.name()));
    }
    let (vocab, data) = prepare(examples, base).map_err(TrainError::from)?;
    let mut rows = Vec::with_capacity(axis.len());
    for i in 0..axis.len() {
        let mut config = base.clone();
        let mut file = embeddings;
        match axis {
            SweepAxis::Layers(v) => config.num_layers = v[i],
            SweepAxis::Heads(v) => config.num_heads = v[i],
            SweepAxis::Embeddings(v) => {
                file = match &v[i] {
                    EmbeddingSource::File(p) => Some(p.as_path()),
                    EmbeddingSource::Random => None,
                };
            }
        }
        let value = axis.label(i);
        let wrap = |source| AblationError::Run {
            axis: axis.name(),
            value: value.clone(),
            source,
        };
        let (model, _) = init_model(config, &vocab, file).map_err(wrap)?;
        let outcome = train(model, &vocab, &data, epochs, |r| on_epoch(i, r)).map_err(wrap)?;
        let rec = &outcome.history[outcome.best_epoch - 1];
        let report = rec.test.as_ref().unwrap_or(&rec.train);
        rows.push(AblationRow {
            value,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(AblationTable {
        axis: axis.name().to_string(),
        seed: base.seed,
        epochs,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate;

    #[test]
    fn exactly_one_axis() {
        let both = SweepSpec {
            layers: Some(vec![0, 1]),
            heads: Some(vec![1]),
            embeddings: None,
        };
        assert!(matches!(both.axis(), Err(AblationError::AxisCount(s)) if s == "layers and heads"));
        assert!(matches!(
            SweepSpec::default().axis(),
            Err(AblationError::AxisCount(_))
        ));
        let empty = SweepSpec {
            heads: Some(vec![]),
            ..Default::default()
        };
        assert!(matches!(
            empty.axis(),
            Err(AblationError::NoValues("heads"))
        ));
        let emb = SweepSpec {
            embeddings: Some(vec!["random".into(), "/x/glove.txt".into()]),
            ..Default::default()
        };
        assert_eq!(
            emb.axis().unwrap(),
            SweepAxis::Embeddings(vec![
                EmbeddingSource::Random,
                EmbeddingSource::File("/x/glove.txt".into())
            ])
        );
    }

    #[test]
    fn row_labels() {
        let l = SweepAxis::Layers(vec![0, 1, 3, 5]);
        let labels: Vec<String> = (0..4).map(|i| l.label(i)).collect();
        assert_eq!(labels, ["0 (GRU only)", "1 Layer", "3 Layers", "5 Layers"]);
        let h = SweepAxis::Heads(vec![1, 4, 8]);
        let labels: Vec<String> = (0..3).map(|i| h.label(i)).collect();
        assert_eq!(labels, ["1 Head", "4 Heads", "8 Heads"]);
    }

    #[test]
    fn table_shape() {
        let base = ModelConfig {
            embed_dim: 8,
            gru_hidden: 8,
            num_heads: 2,
            learning_rate: 1e-2,
            batch_size: 16,
            ..Default::default()
        };
        let data = generate(40, 10, 1).unwrap();
        let t = run_ablation(
            &base,
            None,
            &data,
            &SweepAxis::Layers(vec![0, 1]),
            1,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        let md = t.to_markdown();
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| 0 (GRU only) |"));
        let json = serde_json::to_string(&t).unwrap();
        let back: AblationTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_value_names_the_row() {
        let base = ModelConfig {
            embed_dim: 8,
            gru_hidden: 8,
            ..Default::default()
        };
        let data = generate(20, 10, 1).unwrap();
        let err =
            run_ablation(&base, None, &data, &SweepAxis::Heads(vec![3]), 1, |_, _| {}).unwrap_err();
        assert!(err.to_string().starts_with("heads=3 Heads"), "{err}");
    }
}
