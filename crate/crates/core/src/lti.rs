//! Discrete-time LTI systems: state-space form, MIMO transfer functions
//! with a common scalar denominator, and batched signal blocks.
//!
//! Transfer functions are stored directly in the shape used for training:
//! H(z) = D + (N_1 z^{-1} + ... + N_q z^{-q}) / (1 + a_1 z^{-1} + ... + a_q z^{-q})
//! with matrix numerator coefficients and a monic scalar denominator shared
//! by all channel pairs. `fft_apply` runs the whole batch through H on a
//! padded frequency grid; `realize_ccf` / `realize_ocf` give equivalent
//! state-space forms for recurrent and streaming execution.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::Tensor;

/// Denominator magnitude below which a grid point counts as a pole hit.
pub const GRID_SINGULARITY_TOL: f64 = 1e-12;

/// x(t+1) = A x(t) + B u(t), y(t) = C x(t) + D u(t).
#[derive(Debug, Clone)]
pub struct StateSpaceSystem {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
}

impl StateSpaceSystem {
    pub fn new(a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != n || c.cols() != n || d.rows() != c.rows() || d.cols() != b.cols() {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent state-space dims: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                c.rows(),
                c.cols(),
                d.rows(),
                d.cols()
            )));
        }
        Ok(StateSpaceSystem { a, b, c, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// One simulation step: emits y(t) from the current state, then advances it.
    pub fn step(&self, h: &mut [f64], u: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        debug_assert_eq!(h.len(), n);
        let mut y = self.d.matvec(u);
        for (yo, row) in y.iter_mut().zip(0..self.output_dim()) {
            let crow = self.c.row(row);
            for (cv, hv) in crow.iter().zip(h.iter()) {
                *yo += cv * hv;
            }
        }
        let mut next = self.b.matvec(u);
        for i in 0..n {
            let arow = self.a.row(i);
            let mut acc = next[i];
            for (av, hv) in arow.iter().zip(h.iter()) {
                acc += av * hv;
            }
            next[i] = acc;
        }
        h.copy_from_slice(&next);
        y
    }
}

/// Batched multichannel signal, row-major `[batch][time][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    batch: usize,
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SignalBlock {
    pub fn new(batch: usize, len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * len * channels {
            return Err(Error::DimensionMismatch(format!(
                "signal block {}x{}x{} wants {} values, got {}",
                batch,
                len,
                channels,
                batch * len * channels,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("signal block contains non-finite values".into()));
        }
        Ok(SignalBlock { batch, len, channels, data })
    }

    pub fn zeros(batch: usize, len: usize, channels: usize) -> Self {
        SignalBlock { batch, len, channels, data: vec![0.0; batch * len * channels] }
    }

    pub(crate) fn from_raw(batch: usize, len: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), batch * len * channels);
        SignalBlock { batch, len, channels, data }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[(b * self.len + t) * self.channels + c]
    }

    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        self.data[(b * self.len + t) * self.channels + c] = v;
    }

    /// Contiguous `[time][channel]` slice of one batch sample.
    pub fn sample(&self, b: usize) -> &[f64] {
        let stride = self.len * self.channels;
        &self.data[b * stride..(b + 1) * stride]
    }
}

/// Simulates the recursion from initial state `h0` (shared by every batch
/// sample) and returns y(0..len), aligned with the input indices.
pub fn simulate_ss(sys: &StateSpaceSystem, u: &SignalBlock, h0: &[f64]) -> Result<SignalBlock> {
    if u.channels() != sys.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, system wants {}",
            u.channels(),
            sys.input_dim()
        )));
    }
    if h0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, system has {} states",
            h0.len(),
            sys.state_dim()
        )));
    }
    let (p_out, p_in) = (sys.output_dim(), sys.input_dim());
    let mut out = vec![0.0; u.batch() * u.len() * p_out];
    for b in 0..u.batch() {
        let mut h = h0.to_vec();
        for t in 0..u.len() {
            let ut = &u.sample(b)[t * p_in..(t + 1) * p_in];
            let y = sys.step(&mut h, ut);
            out[(b * u.len() + t) * p_out..(b * u.len() + t + 1) * p_out].copy_from_slice(&y);
        }
    }
    Ok(SignalBlock::from_raw(u.batch(), u.len(), p_out, out))
}

/// Rational MIMO transfer function with common monic scalar denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    /// N_1..N_q, each p_out x p_in.
    num: Vec<Tensor>,
    /// a_1..a_q of the monic denominator 1 + sum a_k z^{-k}.
    den: Vec<f64>,
    /// Direct feedthrough D, p_out x p_in.
    feed: Tensor,
}

impl TransferFunction {
    pub fn new(num: Vec<Tensor>, den: Vec<f64>, feed: Tensor) -> Result<Self> {
        if num.len() != den.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} numerator matrices vs {} denominator coefficients",
                num.len(),
                den.len()
            )));
        }
        let (r, c) = (feed.rows(), feed.cols());
        for (j, n) in num.iter().enumerate() {
            if n.rows() != r || n.cols() != c {
                return Err(Error::DimensionMismatch(format!(
                    "numerator {} is {}x{}, feedthrough is {}x{}",
                    j + 1,
                    n.rows(),
                    n.cols(),
                    r,
                    c
                )));
            }
        }
        Ok(TransferFunction { num, den, feed })
    }

    /// Order-zero system y = D u.
    pub fn from_feedthrough(feed: Tensor) -> Self {
        TransferFunction { num: vec![], den: vec![], feed }
    }

    pub fn order(&self) -> usize {
        self.den.len()
    }

    pub fn output_dim(&self) -> usize {
        self.feed.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.feed.cols()
    }

    pub fn num(&self) -> &[Tensor] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn feed(&self) -> &Tensor {
        &self.feed
    }

    /// Trainable parameter count: q numerator matrices, q denominator
    /// coefficients, one feedthrough matrix.
    pub fn param_count(&self) -> usize {
        let (r, c) = (self.feed.rows(), self.feed.cols());
        r * c * self.order() + self.order() + r * c
    }

    /// Numerator matrices stacked into one `[q, p_out, p_in]` tensor, in
    /// coefficient order N_1..N_q. Inverse of `from_stacked`.
    pub fn num_stacked(&self) -> Tensor {
        let (r, c) = (self.feed.rows(), self.feed.cols());
        let mut data = Vec::with_capacity(self.order() * r * c);
        for n in &self.num {
            data.extend_from_slice(n.data());
        }
        Tensor::from_vec(&[self.order(), r, c], data).unwrap()
    }

    pub fn from_stacked(num: &Tensor, den: Vec<f64>, feed: Tensor) -> Result<Self> {
        let shape = num.shape();
        if shape.len() != 3 || shape[1] != feed.rows() || shape[2] != feed.cols() {
            return Err(Error::DimensionMismatch(format!(
                "stacked numerator {:?} does not match feedthrough {}x{}",
                shape,
                feed.rows(),
                feed.cols()
            )));
        }
        let (q, r, c) = (shape[0], shape[1], shape[2]);
        let num = (0..q)
            .map(|j| {
                Tensor::from_vec(&[r, c], num.data()[j * r * c..(j + 1) * r * c].to_vec())
                    .unwrap()
            })
            .collect();
        TransferFunction::new(num, den, feed)
    }
}

/// Frequency response sampled on z_k = exp(-2*pi*i*k/K), stored flat as
/// `[k][out][in]`.
#[derive(Debug, Clone)]
pub struct GridResponse {
    pub grid: usize,
    pub p_out: usize,
    pub p_in: usize,
    pub values: Vec<Complex64>,
}

impl GridResponse {
    pub fn at(&self, k: usize, o: usize, i: usize) -> Complex64 {
        self.values[(k * self.p_out + o) * self.p_in + i]
    }
}

/// Denominator values den(z_k) on the K-point grid; shared by the forward
/// application and the training backward pass.
pub(crate) fn den_on_grid(den: &[f64], k_grid: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(k_grid);
    for k in 0..k_grid {
        let ang = 2.0 * std::f64::consts::PI * k as f64 / k_grid as f64;
        // w = z_k^{-1}
        let w = Complex64::new(ang.cos(), ang.sin());
        // Horner over a_q..a_1, then + 1.
        let mut d = Complex64::new(0.0, 0.0);
        for &a in den.iter().rev() {
            d = (d + a) * w;
        }
        d += 1.0;
        if d.norm() < GRID_SINGULARITY_TOL {
            return Err(Error::SingularGrid { index: k, magnitude: d.norm() });
        }
        out.push(d);
    }
    Ok(out)
}

/// Evaluates H at every grid point. Errors if the denominator vanishes on
/// the grid (a pole sits on a sample point).
pub fn tf_eval_grid(tf: &TransferFunction, k_grid: usize) -> Result<GridResponse> {
    let (p_out, p_in) = (tf.output_dim(), tf.input_dim());
    let den = den_on_grid(&tf.den, k_grid)?;
    let q = tf.order();
    let mut values = Vec::with_capacity(k_grid * p_out * p_in);
    for (k, dk) in den.iter().enumerate() {
        let ang = 2.0 * std::f64::consts::PI * k as f64 / k_grid as f64;
        let w = Complex64::new(ang.cos(), ang.sin());
        for o in 0..p_out {
            for i in 0..p_in {
                // Horner over N_q..N_1 entries, same scheme as the denominator.
                let mut n = Complex64::new(0.0, 0.0);
                for j in (0..q).rev() {
                    n = (n + tf.num[j].at2(o, i)) * w;
                }
                values.push(tf.feed.at2(o, i) + n / dk);
            }
        }
    }
    Ok(GridResponse { grid: k_grid, p_out, p_in, values })
}

/// First `horizon` impulse-response matrices h(0) = D, h(t) for t >= 1 from
/// long division of N by the monic denominator.
pub fn impulse_response(tf: &TransferFunction, horizon: usize) -> Vec<Tensor> {
    let (p_out, p_in) = (tf.output_dim(), tf.input_dim());
    let q = tf.order();
    let mut out: Vec<Tensor> = Vec::with_capacity(horizon);
    if horizon == 0 {
        return out;
    }
    out.push(tf.feed.clone());
    for t in 1..horizon {
        let mut h = if t <= q { tf.num[t - 1].clone() } else { Tensor::zeros(&[p_out, p_in]) };
        for k in 1..=q.min(t - 1) {
            let prev = &out[t - k];
            let a = tf.den[k - 1];
            if a != 0.0 {
                for (hv, pv) in h.data_mut().iter_mut().zip(prev.data()) {
                    *hv -= a * pv;
                }
            }
        }
        out.push(h);
    }
    out
}

/// Applies H to a signal block on a zero-padded FFT grid of size
/// `pad_factor * len`. Zero-padding by at least 2x makes the circular
/// convolution equal the causal linear convolution on the kept window for
/// FIR responses, and leaves only the aliasing tail of the t >= K part for
/// IIR ones.
pub fn fft_apply(tf: &TransferFunction, u: &SignalBlock, pad_factor: usize) -> Result<SignalBlock> {
    if pad_factor < 2 {
        return Err(Error::Contract(format!("pad_factor must be >= 2, got {}", pad_factor)));
    }
    if u.channels() != tf.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, transfer function wants {}",
            u.channels(),
            tf.input_dim()
        )));
    }
    let (p_out, p_in) = (tf.output_dim(), tf.input_dim());
    let len = u.len();
    let k_grid = pad_factor * len;
    let h = tf_eval_grid(tf, k_grid)?;

    let mut out = vec![0.0; u.batch() * len * p_out];
    let mut chan = vec![0.0; len];
    for b in 0..u.batch() {
        // Per-channel input spectra.
        let mut spectra: Vec<Vec<Complex64>> = Vec::with_capacity(p_in);
        for c in 0..p_in {
            for t in 0..len {
                chan[t] = u.at(b, t, c);
            }
            spectra.push(fft::grid_spectrum(&chan, k_grid));
        }
        for o in 0..p_out {
            let mut y_spec = vec![Complex64::new(0.0, 0.0); k_grid];
            for (i, spec) in spectra.iter().enumerate() {
                for k in 0..k_grid {
                    y_spec[k] += h.at(k, o, i) * spec[k];
                }
            }
            let y = fft::grid_signal(y_spec);
            for t in 0..len {
                out[(b * len + t) * p_out + o] = y[t];
            }
        }
    }
    Ok(SignalBlock::from_raw(u.batch(), len, p_out, out))
}

/// Controllable canonical realization, block-companion over the input
/// channels: state dimension p_in * q, the state stacking the last q values
/// of the denominator-filtered input.
pub fn realize_ccf(tf: &TransferFunction) -> StateSpaceSystem {
    let (p_out, p_in) = (tf.output_dim(), tf.input_dim());
    let q = tf.order();
    let n = p_in * q;
    let mut a = Tensor::zeros(&[n, n]);
    let mut b = Tensor::zeros(&[n, p_in]);
    let mut c = Tensor::zeros(&[p_out, n]);
    for k in 0..q {
        // Top block row: -a_{k+1} I.
        for i in 0..p_in {
            a.set2(i, k * p_in + i, -tf.den[k]);
        }
        // Subdiagonal identity blocks shift the stack.
        if k + 1 < q {
            for i in 0..p_in {
                a.set2((k + 1) * p_in + i, k * p_in + i, 1.0);
            }
        }
        for o in 0..p_out {
            for i in 0..p_in {
                c.set2(o, k * p_in + i, tf.num[k].at2(o, i));
            }
        }
    }
    for i in 0..p_in.min(n) {
        b.set2(i, i, 1.0);
    }
    StateSpaceSystem { a, b, c, d: tf.feed.clone() }
}

/// Observable canonical realization, block-companion over the output
/// channels: state dimension p_out * q. The dual of `realize_ccf`; used
/// where the output count is smaller than the input count.
pub fn realize_ocf(tf: &TransferFunction) -> StateSpaceSystem {
    let (p_out, p_in) = (tf.output_dim(), tf.input_dim());
    let q = tf.order();
    let n = p_out * q;
    let mut a = Tensor::zeros(&[n, n]);
    let mut b = Tensor::zeros(&[n, p_in]);
    let mut c = Tensor::zeros(&[p_out, n]);
    for k in 0..q {
        for o in 0..p_out {
            a.set2(k * p_out + o, o, -tf.den[k]);
            if k + 1 < q {
                a.set2(k * p_out + o, (k + 1) * p_out + o, 1.0);
            }
            for i in 0..p_in {
                b.set2(k * p_out + o, i, tf.num[k].at2(o, i));
            }
        }
    }
    for o in 0..p_out.min(n) {
        c.set2(o, o, 1.0);
    }
    StateSpaceSystem { a, b, c, d: tf.feed.clone() }
}

/// Series interconnection g∘f (f feeds g), stacking states as [x_g; x_f].
pub fn compose_series(g: &StateSpaceSystem, f: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    if f.output_dim() != g.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "series: f outputs {} channels, g wants {}",
            f.output_dim(),
            g.input_dim()
        )));
    }
    let (ng, nf) = (g.state_dim(), f.state_dim());
    let n = ng + nf;
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..ng {
        for j in 0..ng {
            a.set2(i, j, g.a.at2(i, j));
        }
    }
    let bg_cf = g.b.matmul(&f.c);
    for i in 0..ng {
        for j in 0..nf {
            a.set2(i, j + ng, bg_cf.at2(i, j));
        }
    }
    for i in 0..nf {
        for j in 0..nf {
            a.set2(i + ng, j + ng, f.a.at2(i, j));
        }
    }
    let p_in = f.input_dim();
    let mut b = Tensor::zeros(&[n, p_in]);
    let bg_df = g.b.matmul(&f.d);
    for i in 0..ng {
        for j in 0..p_in {
            b.set2(i, j, bg_df.at2(i, j));
        }
    }
    for i in 0..nf {
        for j in 0..p_in {
            b.set2(i + ng, j, f.b.at2(i, j));
        }
    }
    let p_out = g.output_dim();
    let mut c = Tensor::zeros(&[p_out, n]);
    let dg_cf = g.d.matmul(&f.c);
    for o in 0..p_out {
        for j in 0..ng {
            c.set2(o, j, g.c.at2(o, j));
        }
        for j in 0..nf {
            c.set2(o, j + ng, dg_cf.at2(o, j));
        }
    }
    let d = g.d.matmul(&f.d);
    StateSpaceSystem::new(a, b, c, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tf(num: &[f64], den: &[f64], d: f64) -> TransferFunction {
        let num = num.iter().map(|&v| Tensor::matrix(&[&[v]])).collect();
        TransferFunction::new(num, den.to_vec(), Tensor::matrix(&[&[d]])).unwrap()
    }

    #[test]
    fn first_order_ccf_matches_textbook_form() {
        // H(z) = n1 z^{-1} / (1 + a1 z^{-1}) + d realizes as
        // A = [-a1], B = [1], C = [n1], D = [d].
        let tf = scalar_tf(&[0.7], &[-0.4], 0.25);
        let ss = realize_ccf(&tf);
        assert_eq!(ss.a.data(), &[0.4]);
        assert_eq!(ss.b.data(), &[1.0]);
        assert_eq!(ss.c.data(), &[0.7]);
        assert_eq!(ss.d.data(), &[0.25]);
    }

    #[test]
    fn impulse_response_solves_the_division_recursion() {
        // First-order pole: h(0)=d, h(t) = n1 (-a1)^{t-1}.
        let tf = scalar_tf(&[0.5], &[-0.8], 2.0);
        let h = impulse_response(&tf, 6);
        assert_eq!(h[0].item(), 2.0);
        for t in 1..6 {
            let want = 0.5 * 0.8f64.powi(t as i32 - 1);
            assert!((h[t as usize].item() - want).abs() < 1e-14, "t={}", t);
        }
    }

    #[test]
    fn order_zero_is_pure_feedthrough() {
        let tf = TransferFunction::from_feedthrough(Tensor::matrix(&[&[1.5, -2.0]]));
        assert_eq!(tf.param_count(), 2);
        let u = SignalBlock::new(1, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0]).unwrap();
        let y = fft_apply(&tf, &u, 2).unwrap();
        let want = [1.5, -2.0, 1.5 * 2.0 + 2.0];
        for t in 0..3 {
            assert!((y.at(0, t, 0) - want[t]).abs() < 1e-12, "t={}", t);
        }
        // CCF of an order-zero system has no state at all.
        let ss = realize_ccf(&tf);
        assert_eq!(ss.state_dim(), 0);
        let y2 = simulate_ss(&ss, &u, &[]).unwrap();
        for t in 0..3 {
            assert!((y2.at(0, t, 0) - want[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_eval_flags_pole_on_grid() {
        // Denominator 1 - z^{-1} vanishes at k = 0 where z = 1.
        let tf = scalar_tf(&[1.0], &[-1.0], 0.0);
        let err = tf_eval_grid(&tf, 8).unwrap_err();
        assert_eq!(err.category(), "singular-grid");
        match err {
            Error::SingularGrid { index, .. } => assert_eq!(index, 0),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn pad_factor_below_two_is_rejected() {
        let tf = scalar_tf(&[0.3], &[0.1], 0.0);
        let u = SignalBlock::new(1, 4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = fft_apply(&tf, &u, 1).unwrap_err();
        assert_eq!(err.category(), "contract-violation");
    }

    #[test]
    fn param_count_matches_storage() {
        let num = vec![Tensor::zeros(&[2, 3]); 4];
        let tf = TransferFunction::new(num, vec![0.0; 4], Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(tf.param_count(), 2 * 3 * 4 + 4 + 2 * 3);
    }

    #[test]
    fn series_composition_matches_cascaded_simulation() {
        let f = realize_ccf(&scalar_tf(&[0.9, -0.2], &[-0.5, 0.06], 0.3));
        let g = realize_ccf(&scalar_tf(&[0.4], &[0.25], -1.0));
        let gf = compose_series(&g, &f).unwrap();
        assert_eq!(gf.state_dim(), f.state_dim() + g.state_dim());
        let u = SignalBlock::new(1, 20, 1, (0..20).map(|t| (t as f64 * 0.7).sin()).collect())
            .unwrap();
        let cascade = simulate_ss(&g, &simulate_ss(&f, &u, &[0.0, 0.0]).unwrap(), &[0.0]).unwrap();
        let fused =
            simulate_ss(&gf, &u, &vec![0.0; gf.state_dim()]).unwrap();
        for t in 0..20 {
            assert!(
                (cascade.at(0, t, 0) - fused.at(0, t, 0)).abs() < 1e-12,
                "t={}: {} vs {}",
                t,
                cascade.at(0, t, 0),
                fused.at(0, t, 0)
            );
        }
    }

    #[test]
    fn ocf_and_ccf_share_the_transfer_function() {
        // 1x2 system: OCF state dim is q, CCF is 2q; both must reproduce
        // the same impulse response.
        let num = vec![
            Tensor::matrix(&[&[0.5, -0.3]]),
            Tensor::matrix(&[&[0.1, 0.8]]),
        ];
        let tf =
            TransferFunction::new(num, vec![-0.9, 0.2], Tensor::matrix(&[&[0.0, 1.0]])).unwrap();
        let ccf = realize_ccf(&tf);
        let ocf = realize_ocf(&tf);
        assert_eq!(ccf.state_dim(), 4);
        assert_eq!(ocf.state_dim(), 2);
        let mut u = SignalBlock::zeros(1, 12, 2);
        u.set(0, 0, 0, 1.0);
        u.set(0, 2, 1, -2.0);
        let yc = simulate_ss(&ccf, &u, &vec![0.0; 4]).unwrap();
        let yo = simulate_ss(&ocf, &u, &vec![0.0; 2]).unwrap();
        for t in 0..12 {
            assert!(
                (yc.at(0, t, 0) - yo.at(0, t, 0)).abs() < 1e-12,
                "t={}: ccf {} vs ocf {}",
                t,
                yc.at(0, t, 0),
                yo.at(0, t, 0)
            );
        }
    }
}
