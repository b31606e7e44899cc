//! Command bodies. Each function does the work of one subcommand, writes
//! its artifacts and returns what it measured so tests and the studies can
//! call them without going through a process boundary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geossm_core::error::{Error, Result};
use geossm_core::geometric::ForwardMode;
use geossm_core::mnist::{load_mnist_idx, MnistSet};
use geossm_core::model::ModelParams;
use geossm_core::selectivity::{run_selective_demo, TokenLabel};
use geossm_core::tasks::{
    derive_seed, gen_selective_copying, SequenceBatch, TaskKind, TaskSpec, STREAM_EVAL,
    STREAM_INIT, STREAM_TRAIN,
};
use geossm_core::train::{accuracy, train, Checkpoint};

use crate::config::{resolve_out, ExperimentConfig};
use crate::fmt::sig6;

/// Evaluation rows use at least this many fresh samples per length.
pub const EVAL_SAMPLES: usize = 2000;
/// Forward chunk for evaluation, bounding peak activation memory.
pub const EVAL_CHUNK: usize = 256;

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Writes an output file, creating parent directories; with an output root
/// set, nested relative paths are expected to not exist yet.
pub fn write_out(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub losses: Vec<f64>,
    pub model: ModelParams,
}

/// Trains per the config and writes `config.json`, `checkpoint.json` and
/// `metrics.csv` into the resolved output directory.
pub fn train_run(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(&out_dir)?;

    let mut model = ModelParams::init(cfg.model, derive_seed(cfg.task.seed, STREAM_INIT, 0))?;
    let train_set = match cfg.task.kind {
        TaskKind::Smnist => {
            let dir = cfg.data_dir.as_deref().ok_or_else(|| {
                Error::Contract("the pixel task needs data_dir pointing at its IDX files".into())
            })?;
            Some(load_train_set(dir)?)
        }
        _ => None,
    };
    let task = cfg.task;
    let report = train(
        &mut model,
        &cfg.train,
        |step| match &train_set {
            Some(set) => Ok(mnist_train_batch(set, &task, step as u64, cfg.train.batch)),
            None => task.train_batch(step as u64, cfg.train.batch),
        },
        |_, _| {},
    )?;

    let mut metrics = String::new();
    writeln!(metrics, "# config: {}", cfg.one_line_json()).unwrap();
    writeln!(metrics, "step,loss").unwrap();
    for (step, loss) in report.losses.iter().enumerate() {
        writeln!(metrics, "{},{}", step, sig6(*loss)).unwrap();
    }
    fs::write(out_dir.join(METRICS_FILE), metrics)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    let ck = Checkpoint::capture(&model, cfg.train.steps as u64);
    fs::write(out_dir.join(CHECKPOINT_FILE), ck.to_json() + "\n")?;

    Ok(TrainOutcome { out_dir, losses: report.losses, model })
}

fn load_train_set(dir: &Path) -> Result<MnistSet> {
    load_mnist_idx(&dir.join("train-images.idx"), &dir.join("train-labels.idx"))
}

pub fn load_test_set(dir: &Path) -> Result<MnistSet> {
    load_mnist_idx(&dir.join("test-images.idx"), &dir.join("test-labels.idx"))
}

/// Pixel-task training batch: `batch` images drawn with replacement on the
/// training seed stream, so step `step` is regenerable in isolation.
pub fn mnist_train_batch(set: &MnistSet, task: &TaskSpec, step: u64, batch: usize) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(task.seed, STREAM_TRAIN, step));
    let indices: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..set.count)).collect();
    set.batch(&indices)
}

/// Accuracy over a whole image set, forwarded in bounded chunks.
pub fn mnist_accuracy(model: &ModelParams, set: &MnistSet, mode: ForwardMode) -> Result<f64> {
    let indices: Vec<usize> = (0..set.count).collect();
    accuracy(model, &set.batch(&indices), mode, EVAL_CHUNK)
}

#[derive(Debug)]
pub struct EvalOutcome {
    /// (length, accuracy) in the order requested.
    pub rows: Vec<(usize, f64)>,
    pub csv: String,
    pub out_path: PathBuf,
}

/// Evaluates a checkpoint over `lengths`, writing one CSV row labeled by
/// model kind under columns named by the lengths.
pub fn eval_run(
    ckpt_path: &Path,
    lengths: &[usize],
    samples: usize,
    out: Option<&Path>,
) -> Result<EvalOutcome> {
    let text = fs::read_to_string(ckpt_path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", ckpt_path.display(), e))))?;
    let ck = Checkpoint::from_json(&text)?;
    let model = ck.restore()?;

    let dir = ckpt_path.parent().unwrap_or_else(|| Path::new("."));
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    if cfg.model != ck.config {
        return Err(Error::Contract(format!(
            "checkpoint model does not match the {} next to it",
            CONFIG_FILE
        )));
    }
    match cfg.task.kind {
        TaskKind::InductionHead | TaskKind::ExtendedInductionHead => {}
        TaskKind::Smnist | TaskKind::SelectiveCopying => {
            return Err(Error::Contract(
                "the length table applies to the recall tasks; this config's task has a \
                 fixed input form"
                    .into(),
            ));
        }
    }
    if lengths.is_empty() {
        return Err(Error::Contract("at least one evaluation length is required".into()));
    }

    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let batch = cfg.task.eval_batch(len, samples)?;
        let acc = accuracy(&model, &batch, cfg.train.mode, EVAL_CHUNK)?;
        rows.push((len, acc));
    }

    let mut csv = String::new();
    writeln!(csv, "# config: {}", cfg.one_line_json()).unwrap();
    writeln!(
        csv,
        "# eval: {{\"lengths\":{:?},\"samples\":{}}}",
        lengths, samples
    )
    .unwrap();
    let header: Vec<String> = lengths.iter().map(|l| l.to_string()).collect();
    writeln!(csv, "model,{}", header.join(",")).unwrap();
    let cells: Vec<String> = rows.iter().map(|&(_, a)| sig6(a)).collect();
    writeln!(csv, "{},{}", model.kind(), cells.join(",")).unwrap();

    let out_path = match out {
        Some(p) => resolve_out(p),
        None => dir.join("eval.csv"),
    };
    write_out(&out_path, &csv)?;
    Ok(EvalOutcome { rows, csv, out_path })
}

pub struct DemoOutcome {
    pub csv: String,
    /// Largest |output| one step after a blank token.
    pub worst_blank: f64,
    /// Largest |output - 0.5| one step after a data token.
    pub worst_data: f64,
}

/// Runs the hand-built blank/data filter and tabulates its trace. The
/// system responds one step late by construction, so outputs pair with the
/// previous step's label.
pub fn demo_run(length: usize, seed: u64) -> Result<DemoOutcome> {
    let steps = run_selective_demo(length, seed)?;
    let mut csv = String::new();
    writeln!(csv, "# demo: {{\"length\":{},\"seed\":{}}}", length, seed).unwrap();
    writeln!(csv, "step,label,output").unwrap();
    let mut worst_blank = 0.0f64;
    let mut worst_data = 0.0f64;
    for (t, step) in steps.iter().enumerate() {
        let label = match step.label {
            TokenLabel::Blank => "blank",
            TokenLabel::Data => "data",
        };
        writeln!(csv, "{},{},{}", t, label, sig6(step.output)).unwrap();
        if t > 0 {
            match steps[t - 1].label {
                TokenLabel::Blank => worst_blank = worst_blank.max(step.output.abs()),
                TokenLabel::Data => worst_data = worst_data.max((step.output - 0.5).abs()),
            }
        }
    }
    Ok(DemoOutcome { csv, worst_blank, worst_data })
}

/// Dumps `batch` sequences in the line format `id id ... -> target`; the
/// label-only demo signal has no target and dumps bare 0/1 lines.
pub fn gendata_run(task: &TaskSpec, batch: usize) -> Result<String> {
    task.validate()?;
    if batch == 0 {
        return Err(Error::Contract("batch must be positive".into()));
    }
    let mut out = String::new();
    match task.kind {
        TaskKind::InductionHead | TaskKind::ExtendedInductionHead => {
            let b = task.eval_batch(task.len, batch)?;
            for i in 0..b.batch {
                let ids: Vec<String> =
                    b.sample_tokens(i).iter().map(|t| t.to_string()).collect();
                writeln!(out, "{} -> {}", ids.join(" "), b.targets[i]).unwrap();
            }
        }
        TaskKind::SelectiveCopying => {
            for i in 0..batch {
                let labels =
                    gen_selective_copying(task.len, derive_seed(task.seed, STREAM_EVAL, i as u64));
                let ids: Vec<String> = labels
                    .iter()
                    .map(|l| match l {
                        TokenLabel::Blank => "0".to_string(),
                        TokenLabel::Data => "1".to_string(),
                    })
                    .collect();
                writeln!(out, "{}", ids.join(" ")).unwrap();
            }
        }
        TaskKind::Smnist => {
            return Err(Error::Contract(
                "the pixel task comes from IDX files; there is nothing to generate".into(),
            ));
        }
    }
    Ok(out)
}
