//! Single-layer sequence-to-sequence LSTM with exact backpropagation through
//! time, trained by Adam on a summed-over-time squared error.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BenchError, Result};
use crate::optim::Adam;
use crate::seed::{derive_seed, rng_from_seed, Stream};
use crate::timeseries::SeriesView;

/// Gate blocks in the stacked weight matrix, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Candidate = 2,
    Output = 3,
}

/// Optimisation and windowing shared by the recurrent models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Truncated-BPTT window length; `None` unrolls the whole training view.
    /// Written as 0 in config files.
    #[serde(with = "zero_is_none")]
    pub window: Option<usize>,
    /// Offset between consecutive window starts; defaults to the window length.
    #[serde(with = "zero_is_none")]
    pub stride: Option<usize>,
    /// Windows averaged per Adam step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            window: Some(50),
            stride: Some(5),
            batch_size: 1,
            seed: 0,
        }
    }
}

/// TOML has no null, so an unset optional length is spelled 0.
mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = usize::deserialize(d)?;
        Ok((v > 0).then_some(v))
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.window == Some(0) || self.stride == Some(0) {
            return Err(invalid("window and stride must be positive"));
        }
        Ok(())
    }

    /// Window start offsets over a training view of `len` steps.
    pub fn window_starts(&self, len: usize) -> Result<(usize, Vec<usize>)> {
        let window = self.window.unwrap_or(len).min(len);
        if window == 0 {
            return Err(invalid("training view is empty"));
        }
        let stride = self.stride.unwrap_or(window);
        Ok((window, (0..=len - window).step_by(stride).collect()))
    }

    pub fn optimizer(&self) -> Adam {
        Adam::new(self.learning_rate, self.beta1, self.beta2, self.eps)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub train_time_s: f64,
    /// Per-step mean squared error over the training windows; entry 0 is
    /// before the first update, entry `e` after epoch `e`.
    pub loss_curve: Vec<f64>,
    /// Epoch at which the loss stopped being finite; `params` is then the last finite checkpoint.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmConfig {
    pub hidden: usize,
    /// Append the previous target as a second input channel (teacher-forced in
    /// training, own prediction at inference).
    pub feed_y: bool,
    pub forget_bias: bool,
    pub train: TrainSpec,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { hidden: 128, feed_y: false, forget_bias: true, train: TrainSpec::default() }
    }
}

impl LstmConfig {
    pub fn d_in(&self) -> usize {
        if self.feed_y {
            2
        } else {
            1
        }
    }
}

/// Weights of the LSTM and its linear readout. Gate weights are stacked
/// row-major as `[f; i; c; o]`, each block `H × (H + d_in)` acting on `[h_{t-1}; x_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden: usize,
    pub d_in: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl LstmParams {
    pub fn zeros(hidden: usize, d_in: usize) -> Self {
        LstmParams {
            hidden,
            d_in,
            w: vec![0.0; 4 * hidden * (hidden + d_in)],
            b: vec![0.0; 4 * hidden],
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    /// Uniform on `[-1/√H, 1/√H]`, optional forget-gate bias of 1.
    pub fn init<R: Rng + ?Sized>(hidden: usize, d_in: usize, forget_bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden, d_in);
        for v in p.w.iter_mut().chain(p.b.iter_mut()).chain(p.w_out.iter_mut()) {
            *v = rng.random_range(-bound..=bound);
        }
        p.b_out = rng.random_range(-bound..=bound);
        if forget_bias {
            p.b[..hidden].iter_mut().for_each(|b| *b = 1.0);
        }
        p
    }

    pub fn cols(&self) -> usize {
        self.hidden + self.d_in
    }

    /// Rows of one gate's weight block.
    pub fn gate_weights(&self, gate: Gate) -> &[f64] {
        let block = self.hidden * self.cols();
        let start = gate as usize * block;
        &self.w[start..start + block]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let start = gate as usize * self.hidden;
        &self.b[start..start + self.hidden]
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len() + self.w_out.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).chain(&self.w_out).all(|v| v.is_finite()) && self.b_out.is_finite()
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w, &mut self.b, &mut self.w_out, std::slice::from_mut(&mut self.b_out)]
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w, &self.b, &self.w_out, std::slice::from_ref(&self.b_out)]
    }

    fn add_assign(&mut self, other: &LstmParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// `4·(H·(H+d_in) + H) + (H + 1)`.
pub fn count_lstm_params(hidden: usize, d_in: usize) -> usize {
    4 * (hidden * (hidden + d_in) + hidden) + hidden + 1
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations retained for BPTT; every vector is indexed by time step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// `[h_{t-1}; x_t]`
    z: Vec<Vec<f64>>,
    /// Post-nonlinearity gates `[f; i; c̃; o]`.
    gates: Vec<Vec<f64>>,
    /// `c_t`, with `c[0]` the initial cell state.
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

/// Forward pass over `inputs` (row-major `T × d_in`) from zero state.
pub fn lstm_forward(params: &LstmParams, inputs: &[f64]) -> Result<LstmCache> {
    let (h_dim, d) = (params.hidden, params.d_in);
    if inputs.is_empty() || inputs.len() % d != 0 {
        return Err(invalid("input window must be a nonempty multiple of d_in"));
    }
    let steps = inputs.len() / d;
    let cols = params.cols();
    let mut cache = LstmCache {
        z: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        c: vec![vec![0.0; h_dim]],
        tanh_c: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
        predictions: Vec::with_capacity(steps),
    };
    let mut h_prev = vec![0.0; h_dim];
    for t in 0..steps {
        let mut z = h_prev.clone();
        z.extend_from_slice(&inputs[t * d..(t + 1) * d]);
        let mut a = params.b.clone();
        for (r, ar) in a.iter_mut().enumerate() {
            let row = &params.w[r * cols..(r + 1) * cols];
            *ar += row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>();
        }
        for (k, v) in a.iter_mut().enumerate() {
            *v = if k / h_dim == Gate::Candidate as usize { v.tanh() } else { sigmoid(*v) };
        }
        let c_prev = cache.c.last().expect("initial cell state");
        let mut c = vec![0.0; h_dim];
        let mut tc = vec![0.0; h_dim];
        let mut h = vec![0.0; h_dim];
        for j in 0..h_dim {
            let (f, i, g, o) = (a[j], a[h_dim + j], a[2 * h_dim + j], a[3 * h_dim + j]);
            c[j] = f * c_prev[j] + i * g;
            tc[j] = c[j].tanh();
            h[j] = o * tc[j];
        }
        let y = params.b_out + params.w_out.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
        if !y.is_finite() {
            return Err(BenchError::Diverged(format!("LSTM output not finite at step {t}")));
        }
        h_prev.clone_from(&h);
        cache.z.push(z);
        cache.gates.push(a);
        cache.c.push(c);
        cache.tanh_c.push(tc);
        cache.h.push(h);
        cache.predictions.push(y);
    }
    Ok(cache)
}

/// Gradients of `scale · Σ_t (ŷ_t − y_t)²`; returns them with the loss value.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, targets: &[f64], scale: f64) -> Result<(LstmParams, f64)> {
    let steps = cache.predictions.len();
    if targets.len() != steps {
        return Err(invalid(format!("{} targets for {steps} predictions", targets.len())));
    }
    let h_dim = params.hidden;
    let cols = params.cols();
    let mut grad = LstmParams::zeros(h_dim, params.d_in);
    let mut dh_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];
    let mut da = vec![0.0; 4 * h_dim];
    let mut loss = 0.0;
    for t in (0..steps).rev() {
        let err = cache.predictions[t] - targets[t];
        loss += scale * err * err;
        let dy = 2.0 * scale * err;
        let h = &cache.h[t];
        grad.b_out += dy;
        for j in 0..h_dim {
            grad.w_out[j] += dy * h[j];
        }
        let a = &cache.gates[t];
        let (c_prev, tc) = (&cache.c[t], &cache.tanh_c[t]);
        for j in 0..h_dim {
            let (f, i, g, o) = (a[j], a[h_dim + j], a[2 * h_dim + j], a[3 * h_dim + j]);
            let dh = dy * params.w_out[j] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
            dc_next[j] = dc * f;
            da[j] = dc * c_prev[j] * f * (1.0 - f);
            da[h_dim + j] = dc * g * i * (1.0 - i);
            da[2 * h_dim + j] = dc * i * (1.0 - g * g);
            da[3 * h_dim + j] = d_o * o * (1.0 - o);
        }
        let z = &cache.z[t];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dar) in da.iter().enumerate() {
            grad.b[r] += dar;
            if dar == 0.0 {
                continue;
            }
            let row = &params.w[r * cols..(r + 1) * cols];
            let grow = &mut grad.w[r * cols..(r + 1) * cols];
            for k in 0..cols {
                grow[k] += dar * z[k];
            }
            for k in 0..h_dim {
                dh_next[k] += dar * row[k];
            }
        }
    }
    Ok((grad, loss))
}

/// Builds the row-major model input for steps `range` of a series.
fn model_inputs(u: &[f64], y: Option<&[f64]>, range: std::ops::Range<usize>) -> Vec<f64> {
    match y {
        None => u[range].to_vec(),
        Some(y) => range
            .flat_map(|t| [u[t], if t > 0 { y[t - 1] } else { 0.0 }])
            .collect(),
    }
}

/// Mean per-step squared error over all windows.
fn window_loss(params: &LstmParams, view: &SeriesView<'_>, feed_y: bool, window: usize, starts: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &s in starts {
        let x = model_inputs(view.u, feed_y.then_some(view.y), s..s + window);
        match lstm_forward(params, &x) {
            Ok(cache) => {
                for (p, y) in cache.predictions.iter().zip(&view.y[s..s + window]) {
                    total += (p - y) * (p - y);
                }
                count += window;
            }
            Err(_) => return f64::NAN,
        }
    }
    total / count as f64
}

/// Fits the LSTM with teacher forcing on `view`; time covers the epoch loop only.
pub fn train_lstm(view: &SeriesView<'_>, config: &LstmConfig) -> Result<TrainOutcome<LstmParams>> {
    let spec = &config.train;
    spec.validate()?;
    if config.hidden == 0 {
        return Err(invalid("hidden size must be positive"));
    }
    let (window, starts) = spec.window_starts(view.len())?;
    let mut init_rng = rng_from_seed(derive_seed(spec.seed, Stream::LstmInit));
    let mut params = LstmParams::init(config.hidden, config.d_in(), config.forget_bias, &mut init_rng);
    let mut order_rng = rng_from_seed(derive_seed(spec.seed, Stream::Shuffle));
    let mut adam = spec.optimizer();
    let feed_y = config.feed_y;

    let start = Instant::now();
    let mut loss_curve = vec![window_loss(&params, view, feed_y, window, &starts)];
    let mut diverged_at = None;
    let mut order = starts.clone();
    for epoch in 1..=spec.epochs {
        let checkpoint = params.clone();
        order.shuffle(&mut order_rng);
        for batch in order.chunks(spec.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut total = LstmParams::zeros(params.hidden, params.d_in);
            for &s in batch {
                let x = model_inputs(view.u, feed_y.then_some(view.y), s..s + window);
                let cache = lstm_forward(&params, &x)?;
                let (g, _) = lstm_backward(&params, &cache, &view.y[s..s + window], scale)?;
                total.add_assign(&g);
            }
            let mut slices = params.slices_mut();
            adam.step(&mut slices, &total.slices());
        }
        let loss = window_loss(&params, view, feed_y, window, &starts);
        if !loss.is_finite() || !params.is_finite() {
            log::warn!("LSTM training diverged at epoch {epoch}; restoring last finite checkpoint");
            params = checkpoint;
            diverged_at = Some(epoch);
            break;
        }
        loss_curve.push(loss);
    }
    let train_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { params, train_time_s, loss_curve, diverged_at })
}

/// Free-running rollout from zero state. With `feed_y` the model's own
/// previous prediction replaces the target channel.
pub fn predict_lstm(params: &LstmParams, u: &[f64], feed_y: bool) -> Result<Vec<f64>> {
    if !feed_y {
        return Ok(lstm_forward(params, u)?.predictions);
    }
    if params.d_in != 2 {
        return Err(invalid("feed_y rollout needs a two-channel model"));
    }
    let mut state = LstmStepper::new(params);
    let mut prev = 0.0;
    u.iter()
        .map(|&x| {
            prev = state.step(&[x, prev]);
            if prev.is_finite() {
                Ok(prev)
            } else {
                Err(BenchError::Diverged("LSTM rollout not finite".into()))
            }
        })
        .collect()
}

/// Incremental single-step evaluation used for closed-loop rollout.
struct LstmStepper<'a> {
    params: &'a LstmParams,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> LstmStepper<'a> {
    fn new(params: &'a LstmParams) -> Self {
        LstmStepper { params, h: vec![0.0; params.hidden], c: vec![0.0; params.hidden] }
    }

    fn step(&mut self, x: &[f64]) -> f64 {
        let p = self.params;
        let (h_dim, cols) = (p.hidden, p.cols());
        let mut z = self.h.clone();
        z.extend_from_slice(x);
        let a: Vec<f64> = (0..4 * h_dim)
            .map(|r| {
                let v = p.b[r] + p.w[r * cols..(r + 1) * cols].iter().zip(&z).map(|(w, x)| w * x).sum::<f64>();
                if r / h_dim == Gate::Candidate as usize {
                    v.tanh()
                } else {
                    sigmoid(v)
                }
            })
            .collect();
        for j in 0..h_dim {
            self.c[j] = a[j] * self.c[j] + a[h_dim + j] * a[2 * h_dim + j];
            self.h[j] = a[3 * h_dim + j] * self.c[j].tanh();
        }
        p.b_out + p.w_out.iter().zip(&self.h).map(|(w, h)| w * h).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_formula() {
        assert_eq!(count_lstm_params(1, 1), 14);
        assert_eq!(count_lstm_params(4, 1), 101);
        assert_eq!(count_lstm_params(128, 1), 66689);
        assert_eq!(LstmParams::zeros(128, 1).n_params(), 66689);
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = LstmParams::zeros(8, 1);
        let cache = lstm_forward(&p, &[0.1, 0.4, 0.2]).unwrap();
        assert_eq!(cache.predictions, vec![0.0; 3]);
    }

    #[test]
    fn two_step_hand_rollout() {
        // H = 1, d_in = 1; weights per gate are [w_h, w_x].
        let mut p = LstmParams::zeros(1, 1);
        p.w = vec![0.5, -0.3, 0.2, 0.8, -0.6, 0.9, 0.1, 0.4];
        p.b = vec![0.1, -0.2, 0.05, 0.3];
        p.w_out = vec![1.5];
        p.b_out = -0.25;
        let x = [0.7, -0.4];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for &xt in &x {
            let f = s(0.5 * h - 0.3 * xt + 0.1);
            let i = s(0.2 * h + 0.8 * xt - 0.2);
            let g = (-0.6 * h + 0.9 * xt + 0.05).tanh();
            let o = s(0.1 * h + 0.4 * xt + 0.3);
            c = f * c + i * g;
            h = o * c.tanh();
            expected.push(1.5 * h - 0.25);
        }
        let got = lstm_forward(&p, &x).unwrap().predictions;
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // Closed-loop stepper agrees with the batch forward pass.
        let mut stepper = LstmStepper::new(&p);
        for (xt, e) in x.iter().zip(&expected) {
            assert!((stepper.step(&[*xt]) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::init(3, 1, true, &mut rng);
        let x = [0.1, 0.2, 0.3, 0.05];
        let cache = lstm_forward(&p, &x).unwrap();
        let targets = cache.predictions.clone();
        let (g, loss) = lstm_backward(&p, &cache, &targets, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn readout_bias_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(4, 1, true, &mut rng);
        let x = [0.1, 0.45, 0.3, 0.0, 0.2];
        let y = [0.2, 0.1, 0.5, 0.3, 0.25];
        let cache = lstm_forward(&p, &x).unwrap();
        let scale = 0.5;
        let (g, _) = lstm_backward(&p, &cache, &y, scale).unwrap();
        let expected: f64 = cache.predictions.iter().zip(&y).map(|(a, b)| 2.0 * scale * (a - b)).sum();
        assert!((g.b_out - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let s = crate::timeseries::generate_narma10(200, 1).unwrap();
        let view = SeriesView { u: &s.u, y: &s.y, offset: 0, washout: 0 };
        let cfg = LstmConfig { hidden: 4, train: TrainSpec { epochs: 0, ..Default::default() }, ..Default::default() };
        let out = train_lstm(&view, &cfg).unwrap();
        let mut rng = rng_from_seed(derive_seed(0, Stream::LstmInit));
        assert_eq!(out.params, LstmParams::init(4, 1, true, &mut rng));
        assert_eq!(out.loss_curve.len(), 1);
    }

    #[test]
    fn feed_y_inputs_are_lagged_targets() {
        let u = [1.0, 2.0, 3.0];
        let y = [10.0, 20.0, 30.0];
        assert_eq!(model_inputs(&u, Some(&y), 1..3), vec![2.0, 10.0, 3.0, 20.0]);
        assert_eq!(model_inputs(&u, None, 0..2), vec![1.0, 2.0]);
    }

    #[test]
    fn window_layout() {
        let spec = TrainSpec { window: Some(10), stride: Some(4), ..Default::default() };
        assert_eq!(spec.window_starts(22).unwrap(), (10, vec![0, 4, 8, 12]));
        let full = TrainSpec { window: None, stride: None, ..Default::default() };
        assert_eq!(full.window_starts(7).unwrap(), (7, vec![0]));
    }
}
