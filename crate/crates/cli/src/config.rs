//! Experiment configuration files.
//!
//! One JSON file fully determines a run: model, task, optimizer schedule and
//! output directory. The file round-trips losslessly, and every results file
//! embeds a copy, so any table can be regenerated from its own header.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use geossm_core::error::{Error, Result};
use geossm_core::model::ModelConfig;
use geossm_core::tasks::{TaskKind, TaskSpec};
use geossm_core::train::TrainSchedule;

/// When set, every relative output path is created under this directory.
pub const OUTPUT_ROOT_VAR: &str = "GEOSSM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub task: TaskSpec,
    #[serde(default)]
    pub train: TrainSchedule,
    pub out_dir: PathBuf,
    /// Directory with the IDX files for the pixel-stream task; the
    /// generator-backed tasks ignore it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", path.display(), e))))?;
        // serde_json reports line/column in Display, which is the whole
        // diagnostic story for a hand-edited config.
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        let (vocab, classes) = (self.model.vocab(), self.model.classes());
        match self.task.kind {
            TaskKind::InductionHead | TaskKind::ExtendedInductionHead => {
                // The target of both recall tasks is a token id, so the
                // readout must cover exactly the task vocabulary.
                if vocab != self.task.vocab || classes != self.task.vocab {
                    return Err(Error::Contract(format!(
                        "recall tasks need model vocab and classes equal to the task \
                         vocabulary {}, got vocab {} classes {}",
                        self.task.vocab, vocab, classes
                    )));
                }
            }
            TaskKind::Smnist => {
                if self.task.vocab != 256 || vocab != 256 || classes != 10 {
                    return Err(Error::Contract(format!(
                        "the pixel task is 256 grayscale tokens into 10 classes, got task \
                         vocab {} model vocab {} classes {}",
                        self.task.vocab, vocab, classes
                    )));
                }
            }
            TaskKind::SelectiveCopying => {
                return Err(Error::Contract(
                    "selective copying is a demo signal, not a trainable experiment".into(),
                ));
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Contract("out_dir must be non-empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        // Cannot fail: every field is a plain struct of finite numbers,
        // strings and paths.
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Single-line form used in `# config:` headers of results files.
    pub fn one_line_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization")
    }

    pub fn resolved_out_dir(&self) -> PathBuf {
        resolve_out(&self.out_dir)
    }
}

/// Applies [`OUTPUT_ROOT_VAR`] to relative paths. Absolute paths and runs
/// without the variable pass through unchanged.
pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
