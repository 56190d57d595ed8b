use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One JSON-lines record: `{"text": ..., "label": 0|1, "split": "train"|"test"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<Example>, TextError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| TextError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| TextError::Dataset {
            path: shown.clone(),
            line: i + 1,
            reason,
        };
        let ex: Example = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if ex.label > 1 {
            return Err(err(format!("label {} is not 0 or 1", ex.label)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<(), TextError> {
    let io = |source| TextError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("serializable");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}
