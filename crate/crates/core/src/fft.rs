//! FFT plumbing shared by frequency-domain transfer-function application.
//!
//! Grid convention: all spectra live on z_k = exp(-2*pi*i*k/K), k = 0..K.
//! For the z-transform X(z) = sum_t x(t) z^{-t}, sampling at z_k gives
//! X(z_k) = sum_t x(t) e^{+2*pi*i*kt/K}, which is the *unnormalized inverse*
//! DFT of x. The matching synthesis direction is the forward DFT scaled by
//! 1/K. Keeping both directions behind this module means the sign/scaling
//! pairing is decided exactly once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn run_plan(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let plan = PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    });
    plan.process(buf);
}

/// Spectrum of `x` on the K-point grid, zero-padded to length `k`.
pub fn grid_spectrum(x: &[f64], k: usize) -> Vec<Complex64> {
    assert!(x.len() <= k, "signal longer than grid: {} > {}", x.len(), k);
    let mut buf: Vec<Complex64> = Vec::with_capacity(k);
    buf.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
    buf.resize(k, Complex64::new(0.0, 0.0));
    run_plan(&mut buf, true);
    buf
}

/// Complex spectrum of an already complex buffer (in place).
pub fn grid_spectrum_inplace(buf: &mut [Complex64]) {
    run_plan(buf, true);
}

/// Real time-domain signal from a grid spectrum. Length equals the grid size;
/// the imaginary residue of a conjugate-symmetric spectrum is discarded.
pub fn grid_signal(mut spec: Vec<Complex64>) -> Vec<f64> {
    let k = spec.len();
    run_plan(&mut spec, false);
    let scale = 1.0 / k as f64;
    spec.into_iter().map(|c| c.re * scale).collect()
}
