//! Gated LTI sequence model: two trainable rational filters and a scalar
//! output gate driven by the mixing residual.
//!
//! With u(t) the embedded token sequence, the pipeline per sample is
//!
//!   y_s = Sigma(u)                    m-channel LTI mix, order q_sigma
//!   r   = Sigma_r(y_s - u)            scalar gate drive, order nu_r
//!   s(t) = squash(r(t))               strictly inside (0, 1)
//!   y(t+1) = y(t) + (y_s(t) - y(t)) * s(t),   y(0) = 0
//!
//! and the model emits y(t+1) at position t. All selectivity lives in the
//! gate: s decides how much of the current LTI mix to fold into the running
//! output, while Sigma itself is time-invariant, which is what lets one
//! trained filter serve every sequence length and lets training run through
//! a frequency-domain application of Sigma instead of a sequential scan.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lti::{fft_apply, realize_ccf, realize_ocf, SignalBlock, StateSpaceSystem, TransferFunction};
use crate::model::{check_tokens, pool_head, HeadMode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GeometricConfig {
    /// Channel count m (embedding width and Sigma input/output width).
    pub channels: usize,
    /// Fast suborder of Sigma.
    pub nu_f: usize,
    /// Memory suborder of Sigma; the filter order is nu_f + nu_m.
    pub nu_m: usize,
    /// Order of the scalar gate-drive filter Sigma_r.
    pub nu_r: usize,
    pub vocab: usize,
    pub classes: usize,
    pub head: HeadMode,
}

impl GeometricConfig {
    pub fn sigma_order(&self) -> usize {
        self.nu_f + self.nu_m
    }

    /// Streaming state footprint: Sigma in controllable form (m * q_sigma),
    /// Sigma_r in observable form (nu_r), plus the m-channel gate output.
    pub fn state_len(&self) -> usize {
        self.channels * self.sigma_order() + self.nu_r + self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.sigma_order() == 0
            || self.nu_r == 0
            || self.vocab < 2
            || self.classes < 2
        {
            return Err(Error::Contract(format!(
                "gated model config out of range: m {}, q_sigma {}, nu_r {}, vocab {}, classes {}",
                self.channels,
                self.sigma_order(),
                self.nu_r,
                self.vocab,
                self.classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeometricParams {
    pub cfg: GeometricConfig,
    /// m x m rational filter of order nu_f + nu_m.
    pub sigma: TransferFunction,
    /// 1 x m rational filter of order nu_r feeding the gate.
    pub sigma_r: TransferFunction,
    /// vocab x m token embeddings.
    pub embed: Tensor,
    /// classes x m readout.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

fn init_tf<R: rand::Rng>(out: usize, inp: usize, order: usize, rng: &mut R) -> TransferFunction {
    // Denominators start at zero: the filter is FIR at init, hence stable,
    // and training moves poles off the origin only where the task wants
    // longer memory.
    let num_sd = Normal::new(0.0, 0.5 / ((inp * order) as f64).sqrt()).unwrap();
    let feed_sd = Normal::new(0.0, 0.5 / (inp as f64).sqrt()).unwrap();
    let num = (0..order)
        .map(|_| Tensor::from_fn(&[out, inp], |_| num_sd.sample(rng)))
        .collect();
    let den = vec![0.0; order];
    let feed = Tensor::from_fn(&[out, inp], |_| feed_sd.sample(rng));
    TransferFunction::new(num, den, feed).unwrap()
}

impl GeometricParams {
    pub fn init(cfg: GeometricConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = init_tf(m, m, cfg.sigma_order(), &mut rng);
        let sigma_r = init_tf(1, m, cfg.nu_r, &mut rng);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let embed = Tensor::from_fn(&[cfg.vocab, m], |_| unit.sample(&mut rng));
        let fan_m = Normal::new(0.0, 1.0 / (m as f64).sqrt()).unwrap();
        let w_out = Tensor::from_fn(&[cfg.classes, m], |_| fan_m.sample(&mut rng));
        let b_out = Tensor::zeros(&[cfg.classes]);
        Ok(GeometricParams { cfg, sigma, sigma_r, embed, w_out, b_out })
    }

    /// Parameters of the sequence mixer alone: both filters, no embeddings
    /// or readout.
    pub fn ssm_param_count(&self) -> usize {
        self.sigma.param_count() + self.sigma_r.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.ssm_param_count() + self.embed.len() + self.w_out.len() + self.b_out.len()
    }

    /// State-space pair for streaming: Sigma in controllable canonical form,
    /// Sigma_r in observable canonical form (the observable form keeps the
    /// scalar-output filter at nu_r states instead of m * nu_r).
    pub fn realize(&self) -> RealizedGeometric {
        RealizedGeometric {
            sigma: realize_ccf(&self.sigma),
            sigma_r: realize_ocf(&self.sigma_r),
        }
    }
}

pub struct RealizedGeometric {
    pub sigma: StateSpaceSystem,
    pub sigma_r: StateSpaceSystem,
}

/// Grid padding for the fft forward mode. Padding by 2 already makes the
/// circular application causal; going to 4 pushes the wrap-around of the
/// impulse-response tail below ~1e-12 for poles up to about 0.6 at the
/// shortest training lengths, at a cost that is still O(l log l).
pub const MODEL_FFT_PAD: usize = 4;

/// Logistic squash clamped to the widest open subinterval of (0, 1) that f64
/// can represent. The gate contract needs s strictly inside the interval:
/// s = 1 would overwrite the accumulated output in one step and s = 0 would
/// freeze it, and both break the convexity bound the scan relies on.
pub fn squash(x: f64) -> f64 {
    crate::model::sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// y(t+1) = y(t) + (y_s(t) - y(t)) * s(t) from y(0) = 0, emitting y(t+1) at
/// position t. `ys` is `[b][t][c]`, `s` is `[b][t]`, `out` matches `ys`.
pub(crate) fn gate_scan_kernel(
    batch: usize,
    len: usize,
    channels: usize,
    ys: &[f64],
    s: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(ys.len(), batch * len * channels);
    debug_assert_eq!(s.len(), batch * len);
    let mut acc = vec![0.0; channels];
    for b in 0..batch {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..len {
            let bt = b * len + t;
            let st = s[bt];
            for c in 0..channels {
                let a = &mut acc[c];
                *a += (ys[bt * channels + c] - *a) * st;
                out[bt * channels + c] = *a;
            }
        }
    }
}

/// Checked wrapper over the gate scan. Rejects gate values outside the open
/// interval (0, 1); `squash` output always passes.
pub fn gate_scan(ys: &SignalBlock, s: &SignalBlock) -> Result<SignalBlock> {
    if s.batch() != ys.batch() || s.len() != ys.len() || s.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "gate of {}x{}x{} over signal of {}x{}x{}",
            s.batch(),
            s.len(),
            s.channels(),
            ys.batch(),
            ys.len(),
            ys.channels()
        )));
    }
    if let Some(&bad) = s.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Contract(format!(
            "gate value {} outside the open interval (0, 1)",
            bad
        )));
    }
    let mut out = vec![0.0; ys.data().len()];
    gate_scan_kernel(ys.batch(), ys.len(), ys.channels(), ys.data(), s.data(), &mut out);
    Ok(SignalBlock::new(ys.batch(), ys.len(), ys.channels(), out).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    /// Apply both filters on a padded frequency grid; O(l log l) per sample
    /// and independent of the filter orders.
    Fft,
    /// Repeat the streaming step; exact reference semantics.
    Recurrent,
}

/// Every intermediate of a forward pass, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct GeometricTrace {
    pub u: SignalBlock,
    pub y_s: SignalBlock,
    pub r: SignalBlock,
    pub s: SignalBlock,
    pub y: SignalBlock,
    /// `[b][class]`.
    pub logits: Vec<f64>,
}

pub fn forward(
    params: &GeometricParams,
    tokens: &[u32],
    batch: usize,
    len: usize,
    mode: ForwardMode,
) -> Result<GeometricTrace> {
    let m = params.cfg.channels;
    check_tokens(tokens, batch, len, params.cfg.vocab)?;
    let mut u = Vec::with_capacity(batch * len * m);
    for &tok in tokens {
        u.extend_from_slice(params.embed.row(tok as usize));
    }
    let u = SignalBlock::new(batch, len, m, u).unwrap();

    let (y_s, r) = match mode {
        ForwardMode::Fft => {
            let y_s = fft_apply(&params.sigma, &u, MODEL_FFT_PAD)?;
            let v_data: Vec<f64> =
                y_s.data().iter().zip(u.data()).map(|(a, b)| a - b).collect();
            let v = SignalBlock::new(batch, len, m, v_data).unwrap();
            let r = fft_apply(&params.sigma_r, &v, MODEL_FFT_PAD)?;
            (y_s, r)
        }
        ForwardMode::Recurrent => {
            let real = params.realize();
            let mut state = StreamState::new(&params.cfg);
            let mut ys_data = vec![0.0; batch * len * m];
            let mut r_data = vec![0.0; batch * len];
            for b in 0..batch {
                state.reset();
                for t in 0..len {
                    let step =
                        streaming_step(params, &real, &mut state, tokens[b * len + t])?;
                    let bt = b * len + t;
                    ys_data[bt * m..(bt + 1) * m].copy_from_slice(&step.y_s);
                    r_data[bt] = step.r;
                }
            }
            (
                SignalBlock::new(batch, len, m, ys_data).unwrap(),
                SignalBlock::new(batch, len, 1, r_data).unwrap(),
            )
        }
    };

    let s_data: Vec<f64> = r.data().iter().map(|&v| squash(v)).collect();
    let s = SignalBlock::new(batch, len, 1, s_data).unwrap();
    let mut y_data = vec![0.0; batch * len * m];
    gate_scan_kernel(batch, len, m, y_s.data(), s.data(), &mut y_data);
    let y = SignalBlock::new(batch, len, m, y_data).unwrap();

    let classes = params.cfg.classes;
    let mut logits = vec![0.0; batch * classes];
    for b in 0..batch {
        let pooled = pool_head(y.sample(b), len, m, params.cfg.head);
        let out = params.w_out.matvec(&pooled);
        for (c, v) in out.iter().enumerate() {
            logits[b * classes + c] = v + params.b_out.data()[c];
        }
    }
    Ok(GeometricTrace { u, y_s, r, s, y, logits })
}

/// Rolling state of one sequence: filter states plus the gate accumulator.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub h_sigma: Vec<f64>,
    pub h_r: Vec<f64>,
    pub gate: Vec<f64>,
}

impl StreamState {
    pub fn new(cfg: &GeometricConfig) -> Self {
        StreamState {
            h_sigma: vec![0.0; cfg.channels * cfg.sigma_order()],
            h_r: vec![0.0; cfg.nu_r],
            gate: vec![0.0; cfg.channels],
        }
    }

    pub fn state_len(&self) -> usize {
        self.h_sigma.len() + self.h_r.len() + self.gate.len()
    }

    pub fn reset(&mut self) {
        self.h_sigma.iter_mut().for_each(|v| *v = 0.0);
        self.h_r.iter_mut().for_each(|v| *v = 0.0);
        self.gate.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Clone)]
pub struct StreamStep {
    pub y_s: Vec<f64>,
    pub r: f64,
    pub s: f64,
    /// Gate output y(t+1), the model output at this position.
    pub y: Vec<f64>,
}

/// Advance one token. The batch recurrent mode is this function applied in a
/// loop, so streaming and batch outputs agree bit for bit.
pub fn streaming_step(
    params: &GeometricParams,
    real: &RealizedGeometric,
    state: &mut StreamState,
    token: u32,
) -> Result<StreamStep> {
    if token as usize >= params.cfg.vocab {
        return Err(Error::TokenOutOfRange { id: token as usize, vocab: params.cfg.vocab });
    }
    let u = params.embed.row(token as usize);
    let y_s = real.sigma.step(&mut state.h_sigma, u);
    let v: Vec<f64> = y_s.iter().zip(u).map(|(a, b)| a - b).collect();
    let r = real.sigma_r.step(&mut state.h_r, &v)[0];
    let s = squash(r);
    for (g, &ys) in state.gate.iter_mut().zip(&y_s) {
        *g += (ys - *g) * s;
    }
    Ok(StreamStep { y_s, r, s, y: state.gate.clone() })
}
