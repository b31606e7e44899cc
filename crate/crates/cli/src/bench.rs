//! Scaling measurements: fft-mode step time against sequence length,
//! retained-activation footprint against filter order, and recurrent
//! baseline step time against state dimension, each with a fitted growth
//! exponent.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use geossm_core::error::{Error, Result};
use geossm_core::geometric::{ForwardMode, GeometricConfig};
use geossm_core::mamba::MambaConfig;
use geossm_core::model::{HeadMode, ModelConfig, ModelParams};
use geossm_core::tasks::SequenceBatch;
use geossm_core::train::loss_and_grad;

use crate::fmt::sig6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Sequence lengths for the fft step-time sweep.
    #[serde(default = "default_lens")]
    pub lens: Vec<usize>,
    /// Combined filter orders for the retained-activation sweep.
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    /// State dimensions for the baseline step-time sweep.
    #[serde(default = "default_state_dims")]
    pub state_dims: Vec<usize>,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Timing repeats; the minimum is reported to damp scheduler noise.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lens() -> Vec<usize> {
    vec![256, 512, 1024, 2048, 4096]
}
fn default_orders() -> Vec<usize> {
    vec![4, 16, 64]
}
fn default_state_dims() -> Vec<usize> {
    vec![32, 64, 128, 256]
}
fn default_channels() -> usize {
    4
}
fn default_batch() -> usize {
    8
}
fn default_repeats() -> usize {
    3
}

impl Default for BenchSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// The length the order and state-dimension sweeps run at; long enough that
/// the scans dominate fixed per-step overhead.
const SWEEP_LEN: usize = 64;

#[derive(Debug)]
pub struct BenchReport {
    pub fft_times: Vec<(usize, f64)>,
    pub fft_slope: f64,
    pub retained: Vec<(usize, usize)>,
    /// (max - min) / min over the retained counts.
    pub retained_variation: f64,
    pub baseline_times: Vec<(usize, f64)>,
    pub baseline_slope: f64,
}

impl BenchReport {
    pub fn to_csv(&self, spec: &BenchSpec) -> String {
        let mut csv = String::new();
        writeln!(csv, "# config: {}", serde_json::to_string(spec).expect("spec serialization"))
            .unwrap();
        writeln!(csv, "metric,x,value").unwrap();
        for &(len, t) in &self.fft_times {
            writeln!(csv, "fft_step_seconds,{},{}", len, sig6(t)).unwrap();
        }
        writeln!(csv, "fft_step_slope,,{}", sig6(self.fft_slope)).unwrap();
        for &(order, r) in &self.retained {
            writeln!(csv, "retained_elements,{},{}", order, r).unwrap();
        }
        writeln!(csv, "retained_variation,,{}", sig6(self.retained_variation)).unwrap();
        for &(n, t) in &self.baseline_times {
            writeln!(csv, "baseline_step_seconds,{},{}", n, sig6(t)).unwrap();
        }
        writeln!(csv, "baseline_step_slope,,{}", sig6(self.baseline_slope)).unwrap();
        csv
    }

    pub fn summary(&self) -> String {
        format!(
            "fft step-time log-log slope vs length: {}\n\
             retained elements variation across filter orders: {}%\n\
             baseline step-time log-log slope vs state dimension: {}",
            sig6(self.fft_slope),
            sig6(self.retained_variation * 100.0),
            sig6(self.baseline_slope)
        )
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn random_batch(vocab: usize, classes: usize, len: usize, batch: usize, seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..batch * len).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let targets = (0..batch).map(|_| rng.gen_range(0..classes as u32)).collect();
    SequenceBatch { batch, len, vocab, tokens, targets }
}

/// Minimum wall time of a full forward/backward step over `repeats` runs.
fn time_step(
    model: &ModelParams,
    batch: &SequenceBatch,
    mode: ForwardMode,
    repeats: usize,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        loss_and_grad(model, batch, mode, 0)?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn geometric_config(channels: usize, order: usize) -> ModelConfig {
    // Split the combined order between the forward and diagnostic halves;
    // the gate filter order stays fixed so only the swept order moves.
    ModelConfig::Geometric(GeometricConfig {
        channels,
        nu_f: order / 2,
        nu_m: order - order / 2,
        nu_r: 4,
        vocab: 8,
        classes: 8,
        head: HeadMode::FinalStep,
    })
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    if spec.lens.len() < 2 || spec.state_dims.len() < 2 || spec.orders.is_empty() {
        return Err(Error::Contract(
            "bench needs at least two lengths, two state dimensions and one order".into(),
        ));
    }
    if spec.channels == 0 || spec.batch == 0 {
        return Err(Error::Contract("channels and batch must be positive".into()));
    }

    let fft_model = ModelParams::init(geometric_config(spec.channels, 4), spec.seed)?;
    let mut fft_times = Vec::with_capacity(spec.lens.len());
    for &len in &spec.lens {
        let batch = random_batch(8, 8, len, spec.batch, spec.seed ^ len as u64);
        fft_times.push((len, time_step(&fft_model, &batch, ForwardMode::Fft, spec.repeats)?));
    }
    let fft_slope = log_log_slope(
        &fft_times.iter().map(|&(l, t)| (l as f64, t)).collect::<Vec<_>>(),
    );

    let sweep_batch = random_batch(8, 8, SWEEP_LEN, spec.batch, spec.seed ^ 0x5eed);
    let mut retained = Vec::with_capacity(spec.orders.len());
    for &order in &spec.orders {
        let model = ModelParams::init(geometric_config(spec.channels, order), spec.seed)?;
        let stats = loss_and_grad(&model, &sweep_batch, ForwardMode::Fft, 0)?;
        retained.push((order, stats.retained));
    }
    let min_r = retained.iter().map(|&(_, r)| r).min().expect("nonempty") as f64;
    let max_r = retained.iter().map(|&(_, r)| r).max().expect("nonempty") as f64;
    let retained_variation = (max_r - min_r) / min_r;

    let mut baseline_times = Vec::with_capacity(spec.state_dims.len());
    for &n in &spec.state_dims {
        // Two channels keep the m*n scan term dominant over m^2 work, so
        // the fitted exponent isolates the state-dimension scaling.
        let cfg = ModelConfig::Selective(MambaConfig {
            state_dim: n,
            channels: 2,
            vocab: 8,
            classes: 8,
            head: HeadMode::FinalStep,
        });
        let model = ModelParams::init(cfg, spec.seed)?;
        baseline_times.push((
            n,
            time_step(&model, &sweep_batch, ForwardMode::Recurrent, spec.repeats)?,
        ));
    }
    let baseline_slope = log_log_slope(
        &baseline_times.iter().map(|&(n, t)| (n as f64, t)).collect::<Vec<_>>(),
    );

    Ok(BenchReport {
        fft_times,
        fft_slope,
        retained,
        retained_variation,
        baseline_times,
        baseline_slope,
    })
}
