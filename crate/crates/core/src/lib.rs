//! Gated LTI sequence models at desk scale.
//!
//! The crate has three layers. `lti` holds discrete-time state-space and
//! transfer-function machinery (simulation, frequency-grid evaluation,
//! FFT-based application, canonical realizations). On top of that,
//! `geometric` implements the residual-gated LTI model and `mamba` a small
//! selective-SSM baseline; `selectivity` carries the hand-built selective
//! system the gated architecture is derived from. `tape`, `optim` and
//! `train` provide reverse-mode differentiation over the fixed op set the
//! two models use, Adam, and the training loop; `tasks` and `mnist`
//! generate the recall tasks and parse IDX image data.
//!
//! Everything is f64 and deterministic: a fixed seed reproduces batches,
//! parameter trajectories and metric histories bit for bit.

pub mod error;
pub mod fft;
pub mod geometric;
pub mod lti;
pub mod mamba;
pub mod mnist;
pub mod model;
pub mod optim;
pub mod selectivity;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
