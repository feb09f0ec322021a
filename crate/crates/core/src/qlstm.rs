//! Quantum-gated LSTM. The four gate transforms are small variational
//! circuits sharing one input embedding and one decoding layer; the cell and
//! hidden updates are classical.
//!
//! Each circuit starts in `|0…0⟩`, applies `Rx(q_i)` per wire, then per layer
//! `Rx(θ_{l,i})` per wire followed by a closed CNOT ring, and returns exact
//! per-wire `⟨σz⟩`. Circuit gradients come from the parameter-shift rule; the
//! classical weights use the chain rule through the cached circuit Jacobians.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BenchError, Result};
use crate::quantum::{rx, QuantumState};
use crate::recurrent::{TrainOutcome, TrainSpec};
use crate::seed::{derive_seed, rng_from_seed, Stream};
use crate::timeseries::SeriesView;

pub const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QlstmConfig {
    pub hidden: usize,
    pub qubits: usize,
    pub qlayers: usize,
    /// Biases on the input embedding and the shared decoding layer.
    pub proj_bias: bool,
    /// Truncate the training view to this many steps.
    pub max_steps: Option<usize>,
    pub train: TrainSpec,
}

impl Default for QlstmConfig {
    fn default() -> Self {
        QlstmConfig { hidden: 4, qubits: 4, qlayers: 1, proj_bias: true, max_steps: None, train: TrainSpec::default() }
    }
}

/// `n_q(h+d) [+n_q] + 4·L·n_q + h·n_q [+h] + (h+1)`.
pub fn count_qlstm_params(hidden: usize, d_in: usize, n_q: usize, n_layers: usize, proj_bias: bool) -> usize {
    let bias = if proj_bias { n_q + hidden } else { 0 };
    n_q * (hidden + d_in) + GATES * n_layers * n_q + hidden * n_q + bias + hidden + 1
}

/// Exact per-wire `⟨σz⟩` of the gate circuit. `theta` is row-major `n_layers × n_q`.
pub fn gate_circuit(q: &[f64], theta: &[f64]) -> Vec<f64> {
    let n_q = q.len();
    debug_assert!(n_q > 0 && theta.len() % n_q == 0);
    let mut state = QuantumState::zero(n_q);
    for (i, &angle) in q.iter().enumerate() {
        state.apply_one_qubit(&rx(angle), i).expect("wire in range");
    }
    for layer in theta.chunks(n_q) {
        for (i, &angle) in layer.iter().enumerate() {
            state.apply_one_qubit(&rx(angle), i).expect("wire in range");
        }
        if n_q > 1 {
            for i in 0..n_q {
                state.apply_cnot(i, (i + 1) % n_q).expect("distinct wires");
            }
        }
    }
    state.pauli_z_expectations()
}

/// Circuit outputs with their Jacobians from the parameter-shift rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitJacobian {
    pub values: Vec<f64>,
    /// `d values[k] / d q[i]`, row-major `n_q × n_q`.
    pub d_inputs: Vec<f64>,
    /// `d values[k] / d θ[j]`, row-major `n_q × (n_layers·n_q)`.
    pub d_weights: Vec<f64>,
}

/// `∂E/∂φ = [E(φ + π/2) − E(φ − π/2)] / 2` for every embedded input and weight.
pub fn parameter_shift_grad(q: &[f64], theta: &[f64]) -> CircuitJacobian {
    let n_q = q.len();
    let n_w = theta.len();
    let values = gate_circuit(q, theta);
    let mut d_inputs = vec![0.0; n_q * n_q];
    let mut d_weights = vec![0.0; n_q * n_w];
    let mut shifted = q.to_vec();
    for i in 0..n_q {
        shifted[i] = q[i] + FRAC_PI_2;
        let plus = gate_circuit(&shifted, theta);
        shifted[i] = q[i] - FRAC_PI_2;
        let minus = gate_circuit(&shifted, theta);
        shifted[i] = q[i];
        for k in 0..n_q {
            d_inputs[k * n_q + i] = 0.5 * (plus[k] - minus[k]);
        }
    }
    let mut shifted = theta.to_vec();
    for j in 0..n_w {
        shifted[j] = theta[j] + FRAC_PI_2;
        let plus = gate_circuit(q, &shifted);
        shifted[j] = theta[j] - FRAC_PI_2;
        let minus = gate_circuit(q, &shifted);
        shifted[j] = theta[j];
        for k in 0..n_q {
            d_weights[k * n_w + j] = 0.5 * (plus[k] - minus[k]);
        }
    }
    CircuitJacobian { values, d_inputs, d_weights }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlstmParams {
    pub hidden: usize,
    pub d_in: usize,
    pub n_q: usize,
    pub n_layers: usize,
    /// Input embedding, row-major `n_q × (h + d)`.
    pub w_in: Vec<f64>,
    /// Empty when projection biases are disabled.
    pub b_in: Vec<f64>,
    /// Circuit weights per gate `[f, i, g, o]`, each row-major `n_layers × n_q`.
    pub theta: [Vec<f64>; GATES],
    /// Shared decoding layer, row-major `h × n_q`.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub readout_w: Vec<f64>,
    pub readout_b: f64,
}

impl QlstmParams {
    pub fn zeros(hidden: usize, d_in: usize, n_q: usize, n_layers: usize, proj_bias: bool) -> Self {
        QlstmParams {
            hidden,
            d_in,
            n_q,
            n_layers,
            w_in: vec![0.0; n_q * (hidden + d_in)],
            b_in: if proj_bias { vec![0.0; n_q] } else { Vec::new() },
            theta: std::array::from_fn(|_| vec![0.0; n_layers * n_q]),
            w_out: vec![0.0; hidden * n_q],
            b_out: if proj_bias { vec![0.0; hidden] } else { Vec::new() },
            readout_w: vec![0.0; hidden],
            readout_b: 0.0,
        }
    }

    /// Linear layers uniform on `±1/√fan_in`; circuit weights uniform on `[0, 2π)`.
    pub fn init<R: Rng + ?Sized>(config: &QlstmConfig, d_in: usize, rng: &mut R) -> Self {
        let (h, n_q) = (config.hidden, config.qubits);
        let mut p = Self::zeros(h, d_in, n_q, config.qlayers, config.proj_bias);
        let fill = |v: &mut [f64], bound: f64, rng: &mut R| {
            v.iter_mut().for_each(|x| *x = rng.random_range(-bound..=bound));
        };
        let b_in = 1.0 / ((h + d_in) as f64).sqrt();
        fill(&mut p.w_in, b_in, rng);
        fill(&mut p.b_in, b_in, rng);
        for th in p.theta.iter_mut() {
            th.iter_mut().for_each(|x| *x = rng.random_range(0.0..std::f64::consts::TAU));
        }
        let b_out = 1.0 / (n_q as f64).sqrt();
        fill(&mut p.w_out, b_out, rng);
        fill(&mut p.b_out, b_out, rng);
        let b_r = 1.0 / (h as f64).sqrt();
        fill(&mut p.readout_w, b_r, rng);
        p.readout_b = rng.random_range(-b_r..=b_r);
        p
    }

    pub fn has_bias(&self) -> bool {
        !self.b_in.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.w_in, &self.b_in];
        v.extend(self.theta.iter().map(|t| t.as_slice()));
        v.extend([
            self.w_out.as_slice(),
            self.b_out.as_slice(),
            self.readout_w.as_slice(),
            std::slice::from_ref(&self.readout_b),
        ]);
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let [t0, t1, t2, t3] = &mut self.theta;
        vec![
            &mut self.w_in,
            &mut self.b_in,
            t0,
            t1,
            t2,
            t3,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.readout_w,
            std::slice::from_mut(&mut self.readout_b),
        ]
    }

    fn add_assign(&mut self, other: &QlstmParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn embed(&self, v: &[f64]) -> Vec<f64> {
        let cols = self.hidden + self.d_in;
        (0..self.n_q)
            .map(|k| {
                let b = self.b_in.get(k).copied().unwrap_or(0.0);
                b + self.w_in[k * cols..(k + 1) * cols].iter().zip(v).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    fn decode(&self, e: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let b = self.b_out.get(j).copied().unwrap_or(0.0);
                b + self.w_out[j * self.n_q..(j + 1) * self.n_q].iter().zip(e).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One cell step without gradient bookkeeping.
pub fn qlstm_cell(params: &QlstmParams, x_t: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let step = cell_forward(params, x_t, h_prev, c_prev, false);
    (step.h, step.c)
}

#[derive(Debug, Clone)]
struct CellStep {
    v: Vec<f64>,
    /// Decoded, activated gates `[f, i, g, o]`.
    gates: [Vec<f64>; GATES],
    circuits: [CircuitJacobian; GATES],
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn cell_forward(params: &QlstmParams, x_t: &[f64], h_prev: &[f64], c_prev: &[f64], jacobians: bool) -> CellStep {
    let mut v = h_prev.to_vec();
    v.extend_from_slice(x_t);
    let q = params.embed(&v);
    let circuits: [CircuitJacobian; GATES] = std::array::from_fn(|g| {
        if jacobians {
            parameter_shift_grad(&q, &params.theta[g])
        } else {
            CircuitJacobian { values: gate_circuit(&q, &params.theta[g]), d_inputs: Vec::new(), d_weights: Vec::new() }
        }
    });
    let gates: [Vec<f64>; GATES] = std::array::from_fn(|g| {
        let a = params.decode(&circuits[g].values);
        if g == 2 {
            a.into_iter().map(f64::tanh).collect()
        } else {
            a.into_iter().map(sigmoid).collect()
        }
    });
    let h_dim = params.hidden;
    let mut c = vec![0.0; h_dim];
    let mut tanh_c = vec![0.0; h_dim];
    let mut h = vec![0.0; h_dim];
    for j in 0..h_dim {
        c[j] = gates[0][j] * c_prev[j] + gates[1][j] * gates[2][j];
        tanh_c[j] = c[j].tanh();
        h[j] = gates[3][j] * tanh_c[j];
    }
    CellStep { v, gates, circuits, c_prev: c_prev.to_vec(), c, tanh_c, h }
}

/// Forward pass over a row-major `T × d_in` window from zero state.
pub struct QlstmForward {
    steps: Vec<CellStep>,
    pub predictions: Vec<f64>,
}

pub fn qlstm_forward(params: &QlstmParams, inputs: &[f64], jacobians: bool) -> Result<QlstmForward> {
    let d = params.d_in;
    if inputs.is_empty() || inputs.len() % d != 0 {
        return Err(invalid("input window must be a nonempty multiple of d_in"));
    }
    let mut h = vec![0.0; params.hidden];
    let mut c = vec![0.0; params.hidden];
    let mut steps = Vec::with_capacity(inputs.len() / d);
    let mut predictions = Vec::with_capacity(inputs.len() / d);
    for x in inputs.chunks(d) {
        let step = cell_forward(params, x, &h, &c, jacobians);
        let y = params.readout_b + params.readout_w.iter().zip(&step.h).map(|(w, v)| w * v).sum::<f64>();
        if !y.is_finite() {
            return Err(BenchError::Diverged("QLSTM output not finite".into()));
        }
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        predictions.push(y);
        steps.push(step);
    }
    Ok(QlstmForward { steps, predictions })
}

/// Gradients of `scale · Σ_t (ŷ_t − y_t)²`. The forward pass must have been run with Jacobians.
pub fn qlstm_backward(params: &QlstmParams, fwd: &QlstmForward, targets: &[f64], scale: f64) -> Result<(QlstmParams, f64)> {
    if targets.len() != fwd.predictions.len() {
        return Err(invalid("targets and predictions differ in length"));
    }
    if fwd.steps.first().is_some_and(|s| s.circuits[0].d_inputs.is_empty()) {
        return Err(invalid("forward pass was run without circuit Jacobians"));
    }
    let (h_dim, n_q) = (params.hidden, params.n_q);
    let cols = h_dim + params.d_in;
    let n_w = params.n_layers * n_q;
    let mut grad = QlstmParams::zeros(h_dim, params.d_in, n_q, params.n_layers, params.has_bias());
    let mut dh_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];
    let mut loss = 0.0;
    for (t, step) in fwd.steps.iter().enumerate().rev() {
        let err = fwd.predictions[t] - targets[t];
        loss += scale * err * err;
        let dy = 2.0 * scale * err;
        grad.readout_b += dy;
        let [f, i, g, o] = &step.gates;
        let mut da: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; h_dim]);
        for j in 0..h_dim {
            grad.readout_w[j] += dy * step.h[j];
            let dh = dy * params.readout_w[j] + dh_next[j];
            let d_o = dh * step.tanh_c[j];
            let dc = dh * o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]) + dc_next[j];
            dc_next[j] = dc * f[j];
            da[0][j] = dc * step.c_prev[j] * f[j] * (1.0 - f[j]);
            da[1][j] = dc * g[j] * i[j] * (1.0 - i[j]);
            da[2][j] = dc * i[j] * (1.0 - g[j] * g[j]);
            da[3][j] = d_o * o[j] * (1.0 - o[j]);
        }
        let mut dq = vec![0.0; n_q];
        for gate in 0..GATES {
            let circ = &step.circuits[gate];
            // Decoding layer.
            let mut de = vec![0.0; n_q];
            for j in 0..h_dim {
                let a = da[gate][j];
                if let Some(b) = grad.b_out.get_mut(j) {
                    *b += a;
                }
                for k in 0..n_q {
                    grad.w_out[j * n_q + k] += a * circ.values[k];
                    de[k] += a * params.w_out[j * n_q + k];
                }
            }
            // Circuit.
            for k in 0..n_q {
                for idx in 0..n_q {
                    dq[idx] += de[k] * circ.d_inputs[k * n_q + idx];
                }
                for w in 0..n_w {
                    grad.theta[gate][w] += de[k] * circ.d_weights[k * n_w + w];
                }
            }
        }
        // Input embedding.
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n_q {
            if let Some(b) = grad.b_in.get_mut(k) {
                *b += dq[k];
            }
            for col in 0..cols {
                grad.w_in[k * cols + col] += dq[k] * step.v[col];
            }
            for col in 0..h_dim {
                dh_next[col] += dq[k] * params.w_in[k * cols + col];
            }
        }
    }
    Ok((grad, loss))
}

fn window_loss(params: &QlstmParams, u: &[f64], y: &[f64], window: usize, starts: &[usize]) -> f64 {
    let mut total = 0.0;
    for &s in starts {
        match qlstm_forward(params, &u[s..s + window], false) {
            Ok(fwd) => {
                total += fwd.predictions.iter().zip(&y[s..s + window]).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
            }
            Err(_) => return f64::NAN,
        }
    }
    total / (window * starts.len()) as f64
}

/// Trains every parameter with Adam on the (optionally truncated) training view.
pub fn train_qlstm(view: &SeriesView<'_>, config: &QlstmConfig) -> Result<TrainOutcome<QlstmParams>> {
    let spec = &config.train;
    spec.validate()?;
    if config.hidden == 0 || config.qubits == 0 || config.qlayers == 0 {
        return Err(invalid("hidden, qubits and qlayers must be positive"));
    }
    let len = config.max_steps.map_or(view.len(), |m| m.min(view.len()));
    let (u, y) = (&view.u[..len], &view.y[..len]);
    let (window, starts) = spec.window_starts(len)?;
    let mut init_rng = rng_from_seed(derive_seed(spec.seed, Stream::QlstmInit));
    let mut params = QlstmParams::init(config, 1, &mut init_rng);
    let mut order_rng = rng_from_seed(derive_seed(spec.seed, Stream::Shuffle));
    let mut adam = spec.optimizer();

    let start = Instant::now();
    let mut loss_curve = vec![window_loss(&params, u, y, window, &starts)];
    let mut diverged_at = None;
    let mut order = starts.clone();
    for epoch in 1..=spec.epochs {
        let checkpoint = params.clone();
        order.shuffle(&mut order_rng);
        for batch in order.chunks(spec.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut total = QlstmParams::zeros(params.hidden, 1, params.n_q, params.n_layers, params.has_bias());
            for &s in batch {
                let fwd = qlstm_forward(&params, &u[s..s + window], true)?;
                let (g, _) = qlstm_backward(&params, &fwd, &y[s..s + window], scale)?;
                total.add_assign(&g);
            }
            let mut slices = params.slices_mut();
            let grads = total.slices();
            adam.step(&mut slices, &grads);
        }
        let loss = window_loss(&params, u, y, window, &starts);
        if !loss.is_finite() || !params.is_finite() {
            log::warn!("QLSTM training diverged at epoch {epoch}; restoring last finite checkpoint");
            params = checkpoint;
            diverged_at = Some(epoch);
            break;
        }
        loss_curve.push(loss);
    }
    Ok(TrainOutcome { params, train_time_s: start.elapsed().as_secs_f64(), loss_curve, diverged_at })
}

/// Free-running rollout over `u` from zero state.
pub fn predict_qlstm(params: &QlstmParams, u: &[f64]) -> Result<Vec<f64>> {
    Ok(qlstm_forward(params, u, false)?.predictions)
}
