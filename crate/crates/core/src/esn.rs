//! Echo state network: fixed sparse tanh reservoir with a scalar input.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::readout::ReservoirFeatures;
use crate::seed::{derive_seed, rng_from_seed, Stream};

const MAX_REBUILDS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsnConfig {
    pub n_nodes: usize,
    pub spectral_radius: f64,
    pub internal_sparsity: f64,
    pub input_sparsity: f64,
    pub input_scale: f64,
    pub washout: usize,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            n_nodes: 300,
            spectral_radius: 0.9,
            internal_sparsity: 0.2,
            input_sparsity: 0.5,
            input_scale: 0.1,
            washout: 100,
            seed: 0,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(invalid("ESN needs at least one node"));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return Err(invalid("spectral radius must be positive and finite"));
        }
        for (name, p) in [("internal_sparsity", self.internal_sparsity), ("input_sparsity", self.input_sparsity)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.input_scale >= 0.0 && self.input_scale.is_finite()) {
            return Err(invalid("input_scale must be finite and non-negative"));
        }
        Ok(())
    }

    /// Count of active recurrent connections, `⌊p·N²⌋`.
    pub fn internal_nonzeros(&self) -> usize {
        (self.internal_sparsity * (self.n_nodes * self.n_nodes) as f64).floor() as usize
    }

    pub fn input_nonzeros(&self) -> usize {
        (self.input_sparsity * self.n_nodes as f64).floor() as usize
    }

    /// Trainable readout size: one weight per node plus bias.
    pub fn readout_params(&self) -> usize {
        self.n_nodes + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnReservoir {
    pub w: DMatrix<f64>,
    pub w_in: DVector<f64>,
    pub config: EsnConfig,
    /// Seed actually used; differs from `config.seed` when a degenerate draw was rebuilt.
    pub build_seed: u64,
}

/// Draws the reservoir. The recurrent matrix has exactly `⌊p·N²⌋` entries
/// uniform on `[-1, 1]` and is rescaled to the configured spectral radius.
pub fn build_reservoir(config: &EsnConfig) -> Result<EsnReservoir> {
    config.validate()?;
    for offset in 0..MAX_REBUILDS {
        let seed = config.seed.wrapping_add(offset);
        let (mut w, w_in) = draw_weights(config, seed);
        let radius = spectral_radius(&w);
        if radius <= f64::EPSILON {
            log::warn!("ESN seed {seed} produced a reservoir with zero spectral radius; rebuilding");
            continue;
        }
        w *= config.spectral_radius / radius;
        return Ok(EsnReservoir { w, w_in, config: config.clone(), build_seed: seed });
    }
    Err(invalid(format!(
        "no reservoir with nonzero spectral radius within {MAX_REBUILDS} seeds (sparsity {})",
        config.internal_sparsity
    )))
}

fn draw_weights(config: &EsnConfig, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let n = config.n_nodes;
    let mut rng = rng_from_seed(derive_seed(seed, Stream::EsnWeights));
    let mut w = DMatrix::zeros(n, n);
    for flat in sample(&mut rng, n * n, config.internal_nonzeros()).into_iter() {
        w[(flat / n, flat % n)] = rng.random_range(-1.0..=1.0);
    }
    let mut w_in = DVector::zeros(n);
    let s = config.input_scale;
    for i in sample(&mut rng, n, config.input_nonzeros()).into_iter() {
        w_in[i] = if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
    }
    (w, w_in)
}

impl EsnReservoir {
    /// Harvests `[x_t; 1]` for every step, with `x_0 = 0` and
    /// `x_t = tanh(W x_{t-1} + W_in u_{t-1})`.
    pub fn run(&self, u: &[f64]) -> Result<ReservoirFeatures> {
        self.run_from(u, &DVector::zeros(self.config.n_nodes))
    }

    pub fn run_from(&self, u: &[f64], x0: &DVector<f64>) -> Result<ReservoirFeatures> {
        Ok(ReservoirFeatures::with_bias(self.states_from(u, x0)?, self.config.washout))
    }

    /// Raw state matrix (T × N) without the bias column.
    pub fn states_from(&self, u: &[f64], x0: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.is_empty() {
            return Err(invalid("input sequence is empty"));
        }
        if x0.len() != self.config.n_nodes {
            return Err(invalid("initial state has wrong dimension"));
        }
        let n = self.config.n_nodes;
        let mut states = DMatrix::zeros(u.len(), n);
        let mut x = x0.clone();
        let mut pre = DVector::zeros(n);
        states.row_mut(0).copy_from(&x.transpose());
        for t in 1..u.len() {
            pre.gemv(1.0, &self.w, &x, 0.0);
            pre.axpy(u[t - 1], &self.w_in, 1.0);
            x.iter_mut().zip(pre.iter()).for_each(|(xi, &p)| *xi = p.tanh());
            states.row_mut(t).copy_from(&x.transpose());
        }
        Ok(states)
    }
}

/// Spectral radius by power iteration, falling back to a dense eigensolver
/// when the iteration does not settle.
pub fn spectral_radius(w: &DMatrix<f64>) -> f64 {
    power_iteration_radius(w, 2000, 1e-12).unwrap_or_else(|| dense_spectral_radius(w))
}

/// Largest eigenvalue modulus from the real Schur form.
pub fn dense_spectral_radius(w: &DMatrix<f64>) -> f64 {
    w.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Power iteration that handles both a dominant real eigenvalue and a
/// dominant complex-conjugate pair. For the pair case the two-term recurrence
/// `A²v ≈ a·Av + b·v` is fitted and `|λ| = √(−b)`. Returns `None` if neither
/// model converges to `tol` within `max_iter` steps.
pub fn power_iteration_radius(w: &DMatrix<f64>, max_iter: usize, tol: f64) -> Option<f64> {
    let n = w.nrows();
    if n == 0 {
        return Some(0.0);
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let av = w * &v;
        let norm1 = av.norm();
        if norm1 == 0.0 {
            return Some(0.0);
        }
        let aav = w * &av;

        // Real dominant eigenvalue: Av ≈ λv.
        let lambda = v.dot(&av);
        let real_resid = (&av - &v * lambda).norm() / norm1;
        let estimate = if real_resid < 1e-9 {
            Some(lambda.abs())
        } else {
            // Conjugate pair: least squares for (a, b) in A²v = a Av + b v.
            let g11 = av.dot(&av);
            let g12 = av.dot(&v);
            let g22 = v.dot(&v);
            let r1 = aav.dot(&av);
            let r2 = aav.dot(&v);
            let det = g11 * g22 - g12 * g12;
            if det.abs() < 1e-300 {
                None
            } else {
                let a = (r1 * g22 - r2 * g12) / det;
                let b = (g11 * r2 - g12 * r1) / det;
                let resid = (&aav - &av * a - &v * b).norm() / aav.norm().max(f64::MIN_POSITIVE);
                let disc = a * a + 4.0 * b;
                if resid < 1e-9 {
                    if disc < 0.0 {
                        Some((-b).sqrt())
                    } else {
                        let s = disc.sqrt();
                        Some(((a + s) / 2.0).abs().max(((a - s) / 2.0).abs()))
                    }
                } else {
                    None
                }
            }
        };
        if let Some(est) = estimate {
            if (est - prev).abs() <= tol * est.max(1.0) {
                return Some(est);
            }
            prev = est;
        } else {
            prev = f64::NAN;
        }
        v = aav / (norm1 * norm1).max(f64::MIN_POSITIVE);
        let nv = v.norm();
        if !nv.is_finite() || nv == 0.0 {
            return None;
        }
        v /= nv;
    }
    None
}
