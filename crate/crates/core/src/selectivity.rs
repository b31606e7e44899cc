//! Hand-built selective LTI systems.
//!
//! A fixed linear system can behave selectively on a two-symbol stream when
//! the symbol embeddings are aligned with its invariant subspaces: the blank
//! embedding spans an unobservable invariant direction, and the state map
//! sends the data embedding into that same direction after one step. The
//! output then reads each data token exactly once, one step after it
//! arrives, and never sees blanks at all. `design_selective_system` builds
//! such a system for any admissible embedding pair; `reference_selective_system`
//! returns the fixed 3-state instance used by the demo.

use crate::error::{Error, Result};
use crate::lti::{simulate_ss, SignalBlock, StateSpaceSystem};
use crate::tensor::Tensor;

/// Minimum sine of the angle between the two embedding vectors.
pub const EMBEDDING_ANGLE_TOL: f64 = 1e-6;

/// A blank/data embedding pair in R^3.
#[derive(Debug, Clone)]
pub struct TokenPairEmbedding {
    blank: [f64; 3],
    data: [f64; 3],
}

impl TokenPairEmbedding {
    pub fn new(blank: [f64; 3], data: [f64; 3]) -> Result<Self> {
        let nb = norm(&blank);
        let nd = norm(&data);
        if nb == 0.0 || nd == 0.0 {
            return Err(Error::IllConditioned("embedding vector is zero".into()));
        }
        let x = cross(&blank, &data);
        if norm(&x) / (nb * nd) < EMBEDDING_ANGLE_TOL {
            return Err(Error::IllConditioned(format!(
                "embedding vectors are nearly parallel (sin angle = {:.3e})",
                norm(&x) / (nb * nd)
            )));
        }
        Ok(TokenPairEmbedding { blank, data })
    }

    /// The fixed embedding pair the example system was designed around.
    pub fn reference() -> Self {
        TokenPairEmbedding {
            blank: [9.05, -11.34, -0.04],
            data: [-4.11, 4.58, 0.60],
        }
    }

    pub fn blank(&self) -> &[f64; 3] {
        &self.blank
    }

    pub fn data(&self) -> &[f64; 3] {
        &self.data
    }

    pub fn vector(&self, label: TokenLabel) -> &[f64; 3] {
        match label {
            TokenLabel::Blank => &self.blank,
            TokenLabel::Data => &self.data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenLabel {
    Blank,
    Data,
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// The fixed 3-state reference instance for the `reference()` embedding
/// pair, entries rounded to the shown digits: B = I, C reads the direction
/// the blank embedding leaves free, and A keeps blank-excited state
/// invisible while flushing data-excited state into that same invisible
/// direction. With the rounded entries the invariant-subspace relations
/// hold to about 3e-2, which is what bounds the demo's output deviations.
pub fn reference_selective_system() -> StateSpaceSystem {
    let a = Tensor::matrix(&[
        &[1.48, 1.14, 0.42],
        &[-1.36, -1.04, -0.16],
        &[0.01, 0.01, 0.046],
    ]);
    let b = Tensor::eye(3);
    let c = Tensor::matrix(&[&[0.1270, 0.0975, 0.9575]]);
    let d = Tensor::zeros(&[1, 3]);
    StateSpaceSystem { a, b, c, d }
}

/// Builds (A, B=I, C) with C.blank = 0, C.data = response, A.blank =
/// lambda*blank, A.data = mu*blank, and eigenvalue 0 on the remaining
/// direction. Requires |lambda| < 1 for stability.
pub fn design_selective_system(
    emb: &TokenPairEmbedding,
    response: f64,
    lambda: f64,
    mu: f64,
) -> Result<StateSpaceSystem> {
    if lambda.abs() >= 1.0 {
        return Err(Error::IllConditioned(format!(
            "|lambda| must be < 1 for stability, got {}",
            lambda
        )));
    }
    let v1 = *emb.blank();
    let v2 = *emb.data();
    let v3 = cross(&v1, &v2);
    // Basis matrix V = [v1 v2 v3] columns; v3 orthogonal to both, so V is
    // invertible exactly when the embedding pair is (new() already checked).
    let v = Tensor::matrix(&[
        &[v1[0], v2[0], v3[0]],
        &[v1[1], v2[1], v3[1]],
        &[v1[2], v2[2], v3[2]],
    ]);
    let v_inv = invert3(&v)?;
    // A*V = [lambda*v1, mu*v1, 0] column by column.
    let av = Tensor::matrix(&[
        &[lambda * v1[0], mu * v1[0], 0.0],
        &[lambda * v1[1], mu * v1[1], 0.0],
        &[lambda * v1[2], mu * v1[2], 0.0],
    ]);
    let a = av.matmul(&v_inv);
    // C*V = [0, response, 0].
    let cv = Tensor::matrix(&[&[0.0, response, 0.0]]);
    let c = cv.matmul(&v_inv);
    StateSpaceSystem::new(a, Tensor::eye(3), c, Tensor::zeros(&[1, 3]))
}

fn invert3(m: &Tensor) -> Result<Tensor> {
    let a = m.data();
    let det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
        + a[2] * (a[3] * a[7] - a[4] * a[6]);
    // Scale-aware singularity test: compare against the entry magnitude cubed.
    let scale: f64 = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if det.abs() < 1e-12 * scale.powi(3).max(f64::MIN_POSITIVE) {
        return Err(Error::IllConditioned(format!(
            "embedding basis is numerically singular (det = {:.3e})",
            det
        )));
    }
    let inv = [
        (a[4] * a[8] - a[5] * a[7]) / det,
        (a[2] * a[7] - a[1] * a[8]) / det,
        (a[1] * a[5] - a[2] * a[4]) / det,
        (a[5] * a[6] - a[3] * a[8]) / det,
        (a[0] * a[8] - a[2] * a[6]) / det,
        (a[2] * a[3] - a[0] * a[5]) / det,
        (a[3] * a[7] - a[4] * a[6]) / det,
        (a[1] * a[6] - a[0] * a[7]) / det,
        (a[0] * a[4] - a[1] * a[3]) / det,
    ];
    Tensor::from_vec(&[3, 3], inv.to_vec())
}

/// One labeled step of a demo run.
#[derive(Debug, Clone, Copy)]
pub struct DemoStep {
    pub label: TokenLabel,
    pub output: f64,
}

/// Runs the example system on a seeded random blank/data sequence from zero
/// state and returns the aligned (input label, output) trace. The output at
/// index t responds to the label at index t-1.
pub fn run_selective_demo(length: usize, seed: u64) -> Result<Vec<DemoStep>> {
    let emb = TokenPairEmbedding::reference();
    let sys = reference_selective_system();
    let labels = crate::tasks::gen_selective_copying(length, seed);
    let mut data = Vec::with_capacity(length * 3);
    for &l in &labels {
        data.extend_from_slice(emb.vector(l));
    }
    let u = SignalBlock::new(1, length, 3, data)?;
    let y = simulate_ss(&sys, &u, &[0.0; 3])?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(t, &label)| DemoStep { label, output: y.at(0, t, 0) })
        .collect())
}
