//! Shared model plumbing: readout heads, a tagged union over the two
//! architectures, and parameter flattening used by the optimizer and by
//! checkpoints. The flat layout and the named-block layout follow the same
//! fixed order, so optimizer state and saved parameters stay aligned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometric::{self, ForwardMode, GeometricConfig, GeometricParams};
use crate::lti::TransferFunction;
use crate::mamba::{self, MambaConfig, MambaParams};
use crate::tensor::Tensor;

/// How per-step channel outputs become one feature vector per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Read the last time step; the head for recall tasks that are queried
    /// at the end of the sequence.
    FinalStep,
    /// Average over time; used for classification over long inputs.
    MeanOverTime,
}

pub(crate) fn pool_head(y: &[f64], len: usize, m: usize, head: HeadMode) -> Vec<f64> {
    match head {
        HeadMode::FinalStep => y[(len - 1) * m..len * m].to_vec(),
        HeadMode::MeanOverTime => {
            let mut out = vec![0.0; m];
            for t in 0..len {
                for i in 0..m {
                    out[i] += y[t * m + i];
                }
            }
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
            out
        }
    }
}

pub(crate) fn check_tokens(tokens: &[u32], batch: usize, len: usize, vocab: usize) -> Result<()> {
    if tokens.len() != batch * len {
        return Err(Error::DimensionMismatch(format!(
            "{} tokens for batch {} x len {}",
            tokens.len(),
            batch,
            len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfRange { id: bad as usize, vocab });
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Kind tags used in checkpoints and CLI output.
pub const GEOMETRIC_KIND: &str = "geometric_ssm";
pub const SELECTIVE_KIND: &str = "selective_ssm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Geometric(GeometricConfig),
    Selective(MambaConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Geometric(_) => GEOMETRIC_KIND,
            ModelConfig::Selective(_) => SELECTIVE_KIND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Geometric(c) => c.validate(),
            ModelConfig::Selective(c) => c.validate(),
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            ModelConfig::Geometric(c) => c.vocab,
            ModelConfig::Selective(c) => c.vocab,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelConfig::Geometric(c) => c.classes,
            ModelConfig::Selective(c) => c.classes,
        }
    }

    pub fn head(&self) -> HeadMode {
        match self {
            ModelConfig::Geometric(c) => c.head,
            ModelConfig::Selective(c) => c.head,
        }
    }
}

/// One named parameter tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum ModelParams {
    Geometric(GeometricParams),
    Selective(MambaParams),
}

fn den_tensor(den: &[f64]) -> Tensor {
    Tensor::from_vec(&[den.len()], den.to_vec()).unwrap()
}

impl ModelParams {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Geometric(c) => ModelParams::Geometric(GeometricParams::init(c, seed)?),
            ModelConfig::Selective(c) => ModelParams::Selective(MambaParams::init(c, seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            ModelParams::Geometric(p) => ModelConfig::Geometric(p.cfg),
            ModelParams::Selective(p) => ModelConfig::Selective(p.cfg),
        }
    }

    pub fn kind(&self) -> &'static str {
        self.config().kind()
    }

    pub fn ssm_param_count(&self) -> usize {
        match self {
            ModelParams::Geometric(p) => p.ssm_param_count(),
            ModelParams::Selective(p) => p.ssm_param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelParams::Geometric(p) => p.param_count(),
            ModelParams::Selective(p) => p.param_count(),
        }
    }

    /// Parameter tensors in the canonical block order. Copies; models are
    /// small enough that this is the simplest safe interface.
    pub fn block_tensors(&self) -> Vec<(&'static str, Tensor)> {
        match self {
            ModelParams::Geometric(p) => vec![
                ("sigma_num", p.sigma.num_stacked()),
                ("sigma_den", den_tensor(p.sigma.den())),
                ("sigma_feed", p.sigma.feed().clone()),
                ("sigma_r_num", p.sigma_r.num_stacked()),
                ("sigma_r_den", den_tensor(p.sigma_r.den())),
                ("sigma_r_feed", p.sigma_r.feed().clone()),
                ("embed", p.embed.clone()),
                ("w_out", p.w_out.clone()),
                ("b_out", p.b_out.clone()),
            ],
            ModelParams::Selective(p) => vec![
                ("a_log", p.a_log.clone()),
                ("w_delta", p.w_delta.clone()),
                ("w_b", p.w_b.clone()),
                ("w_c", p.w_c.clone()),
                ("embed", p.embed.clone()),
                ("w_out", p.w_out.clone()),
                ("b_out", p.b_out.clone()),
            ],
        }
    }

    pub fn block_names(&self) -> Vec<&'static str> {
        self.block_tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn export_blocks(&self) -> BTreeMap<String, ParamBlock> {
        self.block_tensors()
            .into_iter()
            .map(|(n, t)| {
                (n.to_string(), ParamBlock { shape: t.shape().to_vec(), data: t.data().to_vec() })
            })
            .collect()
    }

    /// Rebuild a model from a config and named blocks, verifying that the
    /// block set and every shape match what the config implies.
    pub fn from_blocks(cfg: ModelConfig, blocks: &BTreeMap<String, ParamBlock>) -> Result<Self> {
        let mut model = ModelParams::init(cfg, 0)?;
        let expected = model.block_tensors();
        if blocks.len() != expected.len() {
            return Err(Error::Format(format!(
                "{} parameter blocks, expected {}",
                blocks.len(),
                expected.len()
            )));
        }
        let mut flat = Vec::with_capacity(model.param_count());
        for (name, tensor) in &expected {
            let block = blocks
                .get(*name)
                .ok_or_else(|| Error::Format(format!("missing parameter block {}", name)))?;
            if block.shape != tensor.shape() || block.data.len() != tensor.len() {
                return Err(Error::Format(format!(
                    "parameter block {} has shape {:?}, expected {:?}",
                    name,
                    block.shape,
                    tensor.shape()
                )));
            }
            flat.extend_from_slice(&block.data);
        }
        model.load_flat(&flat)?;
        Ok(model)
    }

    /// All parameters concatenated in canonical block order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, t) in self.block_tensors() {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    /// Overwrite every parameter from a flat vector laid out as `flatten`.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} flat parameters for a model with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &flat[off..off + n];
            off += n;
            s.to_vec()
        };
        match self {
            ModelParams::Geometric(p) => {
                let m = p.cfg.channels;
                let q = p.cfg.sigma_order();
                let nr = p.cfg.nu_r;
                let num = Tensor::from_vec(&[q, m, m], take(q * m * m)).unwrap();
                let den = take(q);
                let feed = Tensor::from_vec(&[m, m], take(m * m)).unwrap();
                p.sigma = TransferFunction::from_stacked(&num, den, feed)?;
                let num = Tensor::from_vec(&[nr, 1, m], take(nr * m)).unwrap();
                let den = take(nr);
                let feed = Tensor::from_vec(&[1, m], take(m)).unwrap();
                p.sigma_r = TransferFunction::from_stacked(&num, den, feed)?;
                p.embed = Tensor::from_vec(&[p.cfg.vocab, m], take(p.cfg.vocab * m)).unwrap();
                p.w_out =
                    Tensor::from_vec(&[p.cfg.classes, m], take(p.cfg.classes * m)).unwrap();
                p.b_out = Tensor::from_vec(&[p.cfg.classes], take(p.cfg.classes)).unwrap();
            }
            ModelParams::Selective(p) => {
                let (n, m) = (p.cfg.state_dim, p.cfg.channels);
                p.a_log = Tensor::from_vec(&[m, n], take(m * n)).unwrap();
                p.w_delta = Tensor::from_vec(&[m, m], take(m * m)).unwrap();
                p.w_b = Tensor::from_vec(&[n, m], take(n * m)).unwrap();
                p.w_c = Tensor::from_vec(&[n, m], take(n * m)).unwrap();
                p.embed = Tensor::from_vec(&[p.cfg.vocab, m], take(p.cfg.vocab * m)).unwrap();
                p.w_out =
                    Tensor::from_vec(&[p.cfg.classes, m], take(p.cfg.classes * m)).unwrap();
                p.b_out = Tensor::from_vec(&[p.cfg.classes], take(p.cfg.classes)).unwrap();
            }
        }
        Ok(())
    }

    /// Class logits `[b][class]`. `mode` selects how the gated model applies
    /// its filters; the selective baseline is inherently recurrent and
    /// ignores it.
    pub fn forward_logits(
        &self,
        tokens: &[u32],
        batch: usize,
        len: usize,
        mode: ForwardMode,
    ) -> Result<Vec<f64>> {
        match self {
            ModelParams::Geometric(p) => {
                Ok(geometric::forward(p, tokens, batch, len, mode)?.logits)
            }
            ModelParams::Selective(p) => Ok(mamba::selective_forward(p, tokens, batch, len)?.logits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric_cfg() -> ModelConfig {
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

    fn selective_cfg() -> ModelConfig {
        ModelConfig::Selective(MambaConfig {
            state_dim: 8,
            channels: 16,
            vocab: 8,
            classes: 8,
            head: HeadMode::FinalStep,
        })
    }

    #[test]
    fn mixer_param_counts_for_the_reference_sizes() {
        let g = ModelParams::init(geometric_cfg(), 0).unwrap();
        assert_eq!(g.ssm_param_count(), 38);
        let s = ModelParams::init(selective_cfg(), 0).unwrap();
        assert_eq!(s.ssm_param_count(), 640);
    }

    #[test]
    fn flatten_load_round_trip_both_kinds() {
        for cfg in [geometric_cfg(), selective_cfg()] {
            let mut model = ModelParams::init(cfg, 3).unwrap();
            let mut flat = model.flatten();
            assert_eq!(flat.len(), model.param_count());
            for (i, v) in flat.iter_mut().enumerate() {
                *v += 0.001 * (i as f64 + 1.0);
            }
            model.load_flat(&flat).unwrap();
            assert_eq!(model.flatten(), flat, "kind {}", model.kind());
        }
    }

    #[test]
    fn block_export_import_round_trip() {
        for cfg in [geometric_cfg(), selective_cfg()] {
            let model = ModelParams::init(cfg, 11).unwrap();
            let rebuilt = ModelParams::from_blocks(cfg, &model.export_blocks()).unwrap();
            assert_eq!(rebuilt.flatten(), model.flatten());
        }
    }

    #[test]
    fn from_blocks_rejects_wrong_shape() {
        let model = ModelParams::init(selective_cfg(), 0).unwrap();
        let mut blocks = model.export_blocks();
        blocks.get_mut("w_b").unwrap().shape = vec![16, 8];
        let err = ModelParams::from_blocks(selective_cfg(), &blocks).unwrap_err();
        assert_eq!(err.category(), "format-error");
    }

    #[test]
    fn kind_tags() {
        assert_eq!(geometric_cfg().kind(), "geometric_ssm");
        assert_eq!(selective_cfg().kind(), "selective_ssm");
    }

    #[test]
    fn mean_head_averages_over_time() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(pool_head(&y, 3, 2, HeadMode::MeanOverTime), vec![3.0, 4.0]);
        assert_eq!(pool_head(&y, 3, 2, HeadMode::FinalStep), vec![5.0, 6.0]);
    }

    #[test]
    fn config_json_round_trip_keeps_variant() {
        for cfg in [geometric_cfg(), selective_cfg()] {
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ModelConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
