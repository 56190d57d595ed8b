//! Run configuration: a TOML file with `[model]`, `[data]` and `[ablate]`
//! sections, overridden field by field from the command line.

use std::path::{Path, PathBuf};

use clap::Args;
use sarcattn::ablation::SweepSpec;
use sarcattn::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl DataPaths {
    fn slots(&mut self) -> [&mut Option<PathBuf>; 4] {
        [
            &mut self.train,
            &mut self.test,
            &mut self.embeddings,
            &mut self.out,
        ]
    }

    /// Absolute paths, so a config written into the output directory
    /// still points at the same files when read back.
    pub fn make_absolute(&mut self) -> std::io::Result<()> {
        for p in self.slots().into_iter().flatten() {
            *p = std::path::absolute(&*p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataPaths,
    pub ablate: SweepSpec,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.data.slots().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Flags that override `[model]` entries.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Number of self-attention layers (#L)
    #[arg(long)]
    pub layers: Option<usize>,
    /// Heads per attention layer (#H)
    #[arg(long)]
    pub heads: Option<usize>,
    /// Embedding width D (ignored when an embedding file is given)
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// BiGRU output width d
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub remove_stop_words: bool,
    #[arg(long)]
    pub scale_full_dim: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub fine_tune_embeddings: bool,
}

impl ModelFlags {
    pub fn apply(&self, m: &mut ModelConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { m.$field = v; })*
            };
        }
        set!(
            layers => num_layers,
            heads => num_heads,
            embed_dim => embed_dim,
            gru_hidden => gru_hidden,
            dropout => dropout,
            max_len => max_len,
            seed => seed,
            learning_rate => learning_rate,
            batch_size => batch_size,
            epochs => epochs,
            min_count => min_count
        );
        m.remove_stop_words |= self.remove_stop_words;
        m.scale_full_dim |= self.scale_full_dim;
        m.no_residual |= self.no_residual;
        m.fine_tune_embeddings |= self.fine_tune_embeddings;
    }
}

/// Flags shared by the commands that train.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML config file; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON-lines training data
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// JSON-lines held-out data (every line treated as test)
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Word-vector text file
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

impl RunFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.model.apply(&mut cfg.model);
        let d = &mut cfg.data;
        for (flag, slot) in [
            (&self.train, &mut d.train),
            (&self.test, &mut d.test),
            (&self.embeddings, &mut d.embeddings),
            (&self.out, &mut d.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        Ok(cfg)
    }
}

/// Checks that referenced inputs exist and that the model settings are
/// coherent, before any work starts.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let train = cfg.data.train.as_ref().ok_or_else(|| {
        CliError::Usage("no training data given (--train or [data] train)".into())
    })?;
    for (what, p) in [
        ("train file", Some(train)),
        ("test file", cfg.data.test.as_ref()),
        ("embedding file", cfg.data.embeddings.as_ref()),
    ] {
        if let Some(p) = p {
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "{what} not found: {}",
                    p.display()
                )));
            }
        }
    }
    if cfg.data.out.is_none() {
        return Err(CliError::Usage(
            "no output directory given (--out or [data] out)".into(),
        ));
    }
    let mut probe = cfg.model.clone();
    probe.vocab_size = probe.vocab_size.max(2);
    if cfg.data.embeddings.is_some() {
        // The file decides D; only check what it cannot change.
        probe.embed_dim = probe.num_heads.max(1);
    }
    probe
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.model.epochs == 0 {
        return Err(CliError::Usage("epochs must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[model]\nnum_layers = 5\nnum_heads = 4\n\n[data]\ntrain = \"d/train.jsonl\"\n",
        )
        .unwrap();
        let flags = RunFlags {
            config: Some(path),
            model: ModelFlags {
                heads: Some(2),
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.model.num_layers, 5);
        assert_eq!(cfg.model.num_heads, 2);
        assert_eq!(cfg.model.learning_rate, 1e-4);
        assert_eq!(cfg.data.train, Some(dir.path().join("d/train.jsonl")));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.model.seed = 7;
        cfg.data.out = Some("/tmp/x".into());
        cfg.ablate.layers = Some(vec![0, 1]);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[model]\nlayers = 3\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CliError::Usage(_))));
    }
}
