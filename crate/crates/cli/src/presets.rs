//! Canonical experiment configurations for the shipped studies. Tests and
//! the acceptance suite build on these so the recipes live in one place.

use std::path::{Path, PathBuf};

use geossm_core::geometric::{ForwardMode, GeometricConfig};
use geossm_core::mamba::MambaConfig;
use geossm_core::model::{HeadMode, ModelConfig};
use geossm_core::optim::AdamConfig;
use geossm_core::tasks::{TaskKind, TaskSpec};
use geossm_core::train::TrainSchedule;

use crate::config::ExperimentConfig;

/// The two-channel gated model used on both recall tasks: combined filter
/// order 4 split evenly, gate filter order 4.
pub fn recall_geometric_model() -> ModelConfig {
    ModelConfig::Geometric(GeometricConfig {
        channels: 2,
        nu_f: 2,
        nu_m: 2,
        nu_r: 4,
        vocab: 8,
        classes: 8,
        head: HeadMode::FinalStep,
    })
}

/// The selective-scan baseline for the recall tasks: state dimension 8,
/// embedding width 16.
pub fn recall_baseline_model() -> ModelConfig {
    ModelConfig::Selective(MambaConfig {
        state_dim: 8,
        channels: 16,
        vocab: 8,
        classes: 8,
        head: HeadMode::FinalStep,
    })
}

/// Induction head, trained at length 16 over an 8-token vocabulary.
pub fn induction_geometric(seed: u64, out_dir: impl Into<PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        model: recall_geometric_model(),
        task: TaskSpec { kind: TaskKind::InductionHead, vocab: 8, len: 16, trigger_len: 0, seed },
        train: TrainSchedule {
            steps: 6000,
            batch: 64,
            adam: AdamConfig::default(),
            mode: ForwardMode::Fft,
        },
        out_dir: out_dir.into(),
        data_dir: None,
    }
}

/// Extended induction head with a 4-token trigger. The longer horizon of
/// the matched-filter fit needs a longer schedule than the plain task.
pub fn extended_geometric(seed: u64, out_dir: impl Into<PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        model: recall_geometric_model(),
        task: TaskSpec {
            kind: TaskKind::ExtendedInductionHead,
            vocab: 8,
            len: 16,
            trigger_len: 4,
            seed,
        },
        train: TrainSchedule {
            steps: 20000,
            batch: 64,
            adam: AdamConfig::default(),
            mode: ForwardMode::Fft,
        },
        out_dir: out_dir.into(),
        data_dir: None,
    }
}

/// The baseline under the identical extended-task budget.
pub fn extended_baseline(seed: u64, out_dir: impl Into<PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        model: recall_baseline_model(),
        task: TaskSpec {
            kind: TaskKind::ExtendedInductionHead,
            vocab: 8,
            len: 16,
            trigger_len: 4,
            seed,
        },
        train: TrainSchedule {
            steps: 20000,
            batch: 64,
            adam: AdamConfig::default(),
            mode: ForwardMode::Recurrent,
        },
        out_dir: out_dir.into(),
        data_dir: None,
    }
}

/// Sequential MNIST on the vendored 10k subset: 16 channels, combined
/// filter order 8, mean-over-time head.
pub fn smnist_geometric(
    seed: u64,
    out_dir: impl Into<PathBuf>,
    data_dir: impl AsRef<Path>,
) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig::Geometric(GeometricConfig {
            channels: 16,
            nu_f: 4,
            nu_m: 4,
            nu_r: 8,
            vocab: 256,
            classes: 10,
            head: HeadMode::MeanOverTime,
        }),
        task: TaskSpec { kind: TaskKind::Smnist, vocab: 256, len: 784, trigger_len: 0, seed },
        train: TrainSchedule {
            steps: 1200,
            batch: 64,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            mode: ForwardMode::Fft,
        },
        out_dir: out_dir.into(),
        data_dir: Some(data_dir.as_ref().to_path_buf()),
    }
}
