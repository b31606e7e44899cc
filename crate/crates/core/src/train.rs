//! Training loop: tape-built loss, Adam over the flat parameter vector,
//! divergence fallback, accuracy evaluation, and JSON checkpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometric::{ForwardMode, MODEL_FFT_PAD};
use crate::model::{HeadMode, ModelConfig, ModelParams, ParamBlock};
use crate::optim::{Adam, AdamConfig};
use crate::tape::Tape;
use crate::tasks::SequenceBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Filter application during training; the selective baseline is always
    /// recurrent and ignores this.
    pub mode: ForwardMode,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            steps: 3000,
            batch: 64,
            adam: AdamConfig::default(),
            mode: ForwardMode::Fft,
        }
    }
}

pub struct StepStats {
    pub loss: f64,
    /// Gradient in the canonical flat parameter order.
    pub grads: Vec<f64>,
    /// Activation elements the tape held between forward and backward.
    pub retained: usize,
}

/// One forward/backward pass over a batch. `step` only labels diagnostics.
pub fn loss_and_grad(
    model: &ModelParams,
    batch: &SequenceBatch,
    mode: ForwardMode,
    step: usize,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let blocks = model.block_tensors();
    let leaves: Vec<_> = blocks.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let (b, l) = (batch.batch, batch.len);
    let head = model.config().head();

    let pooled = match model {
        ModelParams::Geometric(_) => {
            // Leaf order: sigma num/den/feed, sigma_r num/den/feed, embed,
            // w_out, b_out.
            let u = tape.gather(leaves[6], &batch.tokens, b, l)?;
            let y_s = match mode {
                ForwardMode::Fft => {
                    tape.freq_apply(leaves[0], leaves[1], leaves[2], u, MODEL_FFT_PAD)?
                }
                ForwardMode::Recurrent => tape.tf_scan(leaves[0], leaves[1], leaves[2], u)?,
            };
            let v = tape.sub(y_s, u)?;
            let r = match mode {
                ForwardMode::Fft => {
                    tape.freq_apply(leaves[3], leaves[4], leaves[5], v, MODEL_FFT_PAD)?
                }
                ForwardMode::Recurrent => tape.tf_scan(leaves[3], leaves[4], leaves[5], v)?,
            };
            let s = tape.squash(r);
            let y = tape.gate_scan(y_s, s)?;
            match head {
                HeadMode::FinalStep => tape.last_step(y),
                HeadMode::MeanOverTime => tape.mean_time(y),
            }
        }
        ModelParams::Selective(_) => {
            // Leaf order: a_log, w_delta, w_b, w_c, embed, w_out, b_out.
            let u = tape.gather(leaves[4], &batch.tokens, b, l)?;
            let pre = tape.time_linear(leaves[1], u)?;
            let delta = tape.softplus(pre);
            let bbar = tape.time_linear(leaves[2], u)?;
            let cbar = tape.time_linear(leaves[3], u)?;
            let y = tape.selective_scan(leaves[0], u, delta, bbar, cbar)?;
            match head {
                HeadMode::FinalStep => tape.last_step(y),
                HeadMode::MeanOverTime => tape.mean_time(y),
            }
        }
    };
    let n_leaves = leaves.len();
    let logits = tape.readout(pooled, leaves[n_leaves - 2], leaves[n_leaves - 1])?;
    let loss_node = tape.cross_entropy(logits, &batch.targets)?;
    let loss = tape.value(loss_node).item();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, block: "loss".into() });
    }
    let retained = tape.retained_elements();
    let all = tape.backward(loss_node)?;
    let mut grads = Vec::with_capacity(model.param_count());
    for (leaf, (name, _)) in leaves.iter().zip(&blocks) {
        let g = tape.grad(&all, *leaf);
        if !g.is_finite() {
            return Err(Error::NonFiniteLoss { step, block: (*name).into() });
        }
        grads.extend_from_slice(g.data());
    }
    Ok(StepStats { loss, grads, retained })
}

#[derive(Debug)]
pub struct TrainReport {
    /// Loss at every step, in order.
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Runs `steps` updates, pulling one batch per step from `next_batch` and
/// reporting each finite loss through `on_step`. On any error the model is
/// restored to the parameters at which the last finite loss was evaluated
/// (the update that followed it is considered suspect) and the error is
/// returned; losses seen before that are only available via `on_step`.
pub fn train(
    model: &mut ModelParams,
    sched: &TrainSchedule,
    mut next_batch: impl FnMut(usize) -> Result<SequenceBatch>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let mut flat = model.flatten();
    let mut adam = Adam::new(sched.adam, flat.len());
    let mut last_good = flat.clone();
    let mut losses = Vec::with_capacity(sched.steps);
    for step in 0..sched.steps {
        let batch = next_batch(step)?;
        let stats = match loss_and_grad(model, &batch, sched.mode, step) {
            Ok(s) => s,
            Err(e) => {
                model.load_flat(&last_good)?;
                return Err(e);
            }
        };
        losses.push(stats.loss);
        on_step(step, stats.loss);
        last_good.copy_from_slice(&flat);
        adam.step(&mut flat, &stats.grads);
        model.load_flat(&flat)?;
    }
    let final_loss = losses.last().copied().unwrap_or(f64::NAN);
    Ok(TrainReport { losses, final_loss })
}

/// Fraction of rows whose argmax logit hits the target. Runs in chunks of at
/// most `chunk` rows to bound forward memory on big eval sets.
pub fn accuracy(
    model: &ModelParams,
    batch: &SequenceBatch,
    mode: ForwardMode,
    chunk: usize,
) -> Result<f64> {
    if batch.batch == 0 {
        return Err(Error::Contract("empty evaluation batch".into()));
    }
    let chunk = chunk.max(1);
    let classes = model.config().classes();
    let l = batch.len;
    let mut correct = 0usize;
    let mut b0 = 0;
    while b0 < batch.batch {
        let b1 = (b0 + chunk).min(batch.batch);
        let tokens = &batch.tokens[b0 * l..b1 * l];
        let logits = model.forward_logits(tokens, b1 - b0, l, mode)?;
        for (row, &target) in batch.targets[b0..b1].iter().enumerate() {
            let row_logits = &logits[row * classes..(row + 1) * classes];
            let mut best = 0;
            for c in 1..classes {
                if row_logits[c] > row_logits[best] {
                    best = c;
                }
            }
            if best == target as usize {
                correct += 1;
            }
        }
        b0 = b1;
    }
    Ok(correct as f64 / batch.batch as f64)
}

/// Worst relative error between reverse-mode and central-difference
/// gradients over every parameter coordinate.
pub fn gradcheck_model(
    model: &ModelParams,
    batch: &SequenceBatch,
    mode: ForwardMode,
    eps: f64,
) -> Result<f64> {
    let base = loss_and_grad(model, batch, mode, 0)?;
    let flat = model.flatten();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut bumped = flat.clone();
        bumped[i] = flat[i] + eps;
        probe.load_flat(&bumped)?;
        let up = loss_and_grad(&probe, batch, mode, 0)?.loss;
        bumped[i] = flat[i] - eps;
        probe.load_flat(&bumped)?;
        let down = loss_and_grad(&probe, batch, mode, 0)?.loss;
        let fd = (up - down) / (2.0 * eps);
        let ad = base.grads[i];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Saved training state. Field order is part of the format: serializing a
/// freshly loaded checkpoint reproduces the bytes it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub step: u64,
    pub config: ModelConfig,
    pub params: BTreeMap<String, ParamBlock>,
}

impl Checkpoint {
    pub fn capture(model: &ModelParams, step: u64) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_kind: model.kind().to_string(),
            step,
            config: model.config(),
            params: model.export_blocks(),
        }
    }

    pub fn restore(&self) -> Result<ModelParams> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format {} unsupported, expected {}",
                self.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        if self.model_kind != self.config.kind() {
            return Err(Error::Format(format!(
                "model_kind {} does not match the config variant {}",
                self.model_kind,
                self.config.kind()
            )));
        }
        ModelParams::from_blocks(self.config, &self.params)
    }

    pub fn to_json(&self) -> String {
        // Cannot fail: f64 params are finite by the training contract and
        // all keys are strings.
        serde_json::to_string_pretty(self).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint parse: {}", e)))
    }
}
