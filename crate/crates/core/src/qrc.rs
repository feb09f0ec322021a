//! Feedback-driven quantum reservoir.
//!
//! Each time step applies the input block on qubits (0, 1), then one feedback
//! block per previous measurement bit, then the fixed Haar-random reservoir
//! unitary, and finally measures every qubit. The measured bits drive the
//! feedback blocks of the next step. Shots are independent pure-state
//! trajectories; features are shot averages of the measured `σz` eigenvalues.

use std::io::Write;

use nalgebra::{DMatrix, Matrix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quantum::{
    bits_of, cnot4, haar_random_unitary, identity2, kron2, rx, rz, sample_index, QuantumState, Unitary, C64,
};
use crate::readout::ReservoirFeatures;
use crate::seed::{derive_seed, Stream};

/// Largest register for which per-feedback-pattern step matrices are cached.
const MAX_CACHED_QUBITS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Features are shot averages of collapsed measurement outcomes.
    #[default]
    Shots,
    /// Bits are still sampled per shot for feedback, but features record the
    /// exact pre-collapse `⟨σz⟩` averaged over shots.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrcConfig {
    pub n_qubits: usize,
    pub a_in: f64,
    pub a_fb: f64,
    pub n_shots: usize,
    pub seed: u64,
    pub washout: usize,
    /// Qubit pair for the feedback block of bit `j`; defaults to the ring `(j, j+1 mod N)`.
    pub feedback_pairs: Option<Vec<(usize, usize)>>,
    pub mode: MeasurementMode,
}

impl Default for QrcConfig {
    fn default() -> Self {
        QrcConfig {
            n_qubits: 4,
            a_in: 1.0,
            a_fb: 2.2,
            n_shots: 1000,
            seed: 0,
            washout: 100,
            feedback_pairs: None,
            mode: MeasurementMode::Shots,
        }
    }
}

impl QrcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 2 {
            return Err(invalid("quantum reservoir needs at least 2 qubits"));
        }
        if self.n_qubits > 10 {
            return Err(invalid("quantum reservoir limited to 10 qubits"));
        }
        if self.n_shots == 0 {
            return Err(invalid("n_shots must be at least 1"));
        }
        if !self.a_in.is_finite() || !self.a_fb.is_finite() {
            return Err(invalid("a_in and a_fb must be finite"));
        }
        if let Some(pairs) = &self.feedback_pairs {
            if pairs.len() != self.n_qubits {
                return Err(invalid(format!(
                    "{} feedback pairs given for {} qubits",
                    pairs.len(),
                    self.n_qubits
                )));
            }
            for &(a, b) in pairs {
                if a == b || a >= self.n_qubits || b >= self.n_qubits {
                    return Err(invalid(format!("invalid feedback pair ({a}, {b})")));
                }
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match &self.feedback_pairs {
            Some(p) => p.clone(),
            None => (0..self.n_qubits).map(|j| (j, (j + 1) % self.n_qubits)).collect(),
        }
    }

    /// Trainable readout size: one weight per qubit plus bias.
    pub fn readout_params(&self) -> usize {
        self.n_qubits + 1
    }
}

/// `CNOT · (I ⊗ Rz(α)) · CNOT · (Rx(α) ⊗ Rx(α))`.
pub fn block_at_angle(alpha: f64) -> Matrix4<C64> {
    let cx = cnot4();
    cx * kron2(&identity2(), &rz(alpha)) * cx * kron2(&rx(alpha), &rx(alpha))
}

pub fn input_block(u: f64, a_in: f64) -> Matrix4<C64> {
    block_at_angle(a_in * u)
}

/// Bit 0 maps to `+a_fb`, bit 1 to `-a_fb`.
pub fn feedback_block(bit: u8, a_fb: f64) -> Matrix4<C64> {
    let sign = if bit == 0 { 1.0 } else { -1.0 };
    block_at_angle(a_fb * sign)
}

/// Shot-averaged reservoir observations, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct QrcTrace {
    pub features: DMatrix<f64>,
    /// Measured basis index per `[t][shot]` when recording was requested.
    pub per_shot_bits: Option<Vec<Vec<u16>>>,
    pub config: QrcConfig,
}

impl QrcTrace {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn bits(&self, t: usize, shot: usize) -> Option<Vec<u8>> {
        self.per_shot_bits
            .as_ref()
            .map(|b| bits_of(b[t][shot] as usize, self.config.n_qubits))
    }

    /// Features with the bias column appended.
    pub fn reservoir_features(&self) -> ReservoirFeatures {
        ReservoirFeatures::with_bias(self.features.clone(), self.config.washout)
    }

    /// CSV `t,z0,z1,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.config.n_qubits).map(|q| format!("z{q}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for t in 0..self.len() {
            let row: Vec<String> = self.features.row(t).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Basis state (and feedback bits) at t = 0.
    pub initial_index: usize,
    pub record_bits: bool,
}

#[derive(Debug, Clone)]
pub struct QuantumReservoir {
    config: QrcConfig,
    reservoir: Unitary,
    pairs: Vec<(usize, usize)>,
}

impl QuantumReservoir {
    /// Samples the reservoir unitary from the config seed.
    pub fn new(config: QrcConfig) -> Result<Self> {
        config.validate()?;
        let reservoir = haar_random_unitary(config.n_qubits, derive_seed(config.seed, Stream::HaarUnitary))?;
        Self::with_unitary(config, reservoir)
    }

    pub fn with_unitary(config: QrcConfig, reservoir: Unitary) -> Result<Self> {
        config.validate()?;
        if reservoir.n_qubits() != config.n_qubits {
            return Err(invalid("reservoir unitary size does not match n_qubits"));
        }
        let pairs = config.pairs();
        Ok(QuantumReservoir { config, reservoir, pairs })
    }

    pub fn config(&self) -> &QrcConfig {
        &self.config
    }

    pub fn unitary(&self) -> &Unitary {
        &self.reservoir
    }

    pub fn feedback_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// One pre-measurement step: input block, feedback blocks for bits
    /// `m0, m1, ...` in that order, then the reservoir unitary.
    pub fn step(&self, state: &QuantumState, u_t: f64, prev_bits: &[u8]) -> Result<QuantumState> {
        let n = self.config.n_qubits;
        if prev_bits.len() != n || state.n_qubits() != n {
            return Err(invalid(format!(
                "step expects {n} bits and a {n}-qubit state, got {} bits and {} qubits",
                prev_bits.len(),
                state.n_qubits()
            )));
        }
        let mut next = state.clone();
        next.apply_two_qubit(&input_block(u_t, self.config.a_in), 0, 1)?;
        for (j, &bit) in prev_bits.iter().enumerate() {
            let (a, b) = self.pairs[j];
            next.apply_two_qubit(&feedback_block(bit, self.config.a_fb), a, b)?;
        }
        next.apply_unitary(&self.reservoir)?;
        Ok(next)
    }

    pub fn run(&self, u: &[f64]) -> Result<QrcTrace> {
        self.run_with(u, RunOptions::default())
    }

    pub fn run_with(&self, u: &[f64], opts: RunOptions) -> Result<QrcTrace> {
        if u.is_empty() {
            return Err(invalid("input sequence is empty"));
        }
        let n = self.config.n_qubits;
        let dim = 1usize << n;
        if opts.initial_index >= dim {
            return Err(invalid("initial basis index out of range"));
        }
        let n_shots = self.config.n_shots;
        let steps = u.len();
        let step_cache = (n <= MAX_CACHED_QUBITS).then(|| self.step_matrices());
        let input_blocks: Vec<Matrix4<C64>> = u.iter().map(|&x| input_block(x, self.config.a_in)).collect();

        let mut sums = DMatrix::<f64>::zeros(steps, n);
        let mut record = opts.record_bits.then(|| vec![vec![0u16; n_shots]; steps]);
        let shot_seed = derive_seed(self.config.seed, Stream::Shots);

        for shot in 0..n_shots {
            let mut rng = ChaCha8Rng::seed_from_u64(shot_seed);
            rng.set_stream(shot as u64);
            let mut current = opts.initial_index;
            for t in 0..steps {
                let psi = match &step_cache {
                    Some(cache) => apply_cached(&cache[current], &input_blocks[t], current, n),
                    None => self
                        .step(&QuantumState::basis(n, current), u[t], &bits_of(current, n))?
                        .amplitudes()
                        .to_vec(),
                };
                let outcome = sample_index(&psi, &mut rng);
                match self.config.mode {
                    MeasurementMode::Shots => {
                        for q in 0..n {
                            sums[(t, q)] += if (outcome >> q) & 1 == 0 { 1.0 } else { -1.0 };
                        }
                    }
                    MeasurementMode::Exact => {
                        for (i, a) in psi.iter().enumerate() {
                            let p = a.norm_sqr();
                            for q in 0..n {
                                sums[(t, q)] += if (i >> q) & 1 == 0 { p } else { -p };
                            }
                        }
                    }
                }
                if let Some(rec) = record.as_mut() {
                    rec[t][shot] = outcome as u16;
                }
                current = outcome;
            }
        }
        sums /= n_shots as f64;
        Ok(QrcTrace { features: sums, per_shot_bits: record, config: self.config.clone() })
    }

    /// `U_res · U_fb(bits)` for every feedback pattern.
    fn step_matrices(&self) -> Vec<DMatrix<C64>> {
        let n = self.config.n_qubits;
        (0..1usize << n)
            .map(|pattern| {
                let mut m = self.reservoir.matrix().clone();
                let bits = bits_of(pattern, n);
                // The last feedback block applied is leftmost.
                for (j, &bit) in bits.iter().enumerate().rev() {
                    let (a, b) = self.pairs[j];
                    let fb = Unitary::from_two_qubit(&feedback_block(bit, self.config.a_fb), a, b, n)
                        .expect("validated feedback pair");
                    m = &m * fb.matrix();
                }
                m
            })
            .collect()
    }
}

/// Applies `step · U_in` to the basis state `index`. The input block only
/// touches qubits 0 and 1, so at most four columns of `step` contribute.
fn apply_cached(step: &DMatrix<C64>, input: &Matrix4<C64>, index: usize, n: usize) -> Vec<C64> {
    let dim = 1usize << n;
    let base = index & !0b11;
    let local_col = 2 * (index & 1) + ((index >> 1) & 1);
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    for local_row in 0..4 {
        let amp = input[(local_row, local_col)];
        if amp == C64::new(0.0, 0.0) {
            continue;
        }
        // local index = 2 * bit0 + bit1
        let global = base | (local_row >> 1) | ((local_row & 1) << 1);
        for (r, out) in psi.iter_mut().enumerate() {
            *out += step[(r, global)] * amp;
        }
    }
    psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::QuantumState;

    fn max_dev(a: &Matrix4<C64>, b: &Matrix4<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_angle_blocks_are_identity() {
        let id = Matrix4::<C64>::identity();
        assert!(max_dev(&input_block(0.0, 1.0), &id) < 1e-15);
        assert!(max_dev(&input_block(0.37, 0.0), &id) < 1e-15);
        assert!(max_dev(&feedback_block(0, 0.0), &id) < 1e-15);
        assert!(max_dev(&feedback_block(1, 0.0), &id) < 1e-15);
    }

    #[test]
    fn feedback_sign_mapping() {
        assert_eq!(feedback_block(1, 2.2), block_at_angle(-2.2));
        assert_eq!(feedback_block(0, 2.2), block_at_angle(2.2));
    }

    #[test]
    fn ring_pairs_by_default() {
        let cfg = QrcConfig::default();
        assert_eq!(cfg.pairs(), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(cfg.readout_params(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(QrcConfig { n_qubits: 1, ..Default::default() }.validate().is_err());
        assert!(QrcConfig { n_shots: 0, ..Default::default() }.validate().is_err());
        assert!(QrcConfig { a_fb: f64::NAN, ..Default::default() }.validate().is_err());
        let bad_pairs = QrcConfig { feedback_pairs: Some(vec![(0, 0); 4]), ..Default::default() };
        assert!(bad_pairs.validate().is_err());
    }

    #[test]
    fn step_rejects_bad_bits() {
        let r = QuantumReservoir::new(QrcConfig::default()).unwrap();
        assert!(r.step(&QuantumState::zero(4), 0.1, &[0, 0, 0]).is_err());
    }

    #[test]
    fn trivial_reservoir_stays_in_zero() {
        let cfg = QrcConfig { a_in: 0.0, a_fb: 0.0, n_shots: 1, ..Default::default() };
        let r = QuantumReservoir::with_unitary(cfg, Unitary::identity(4)).unwrap();
        let trace = r.run_with(&[0.3; 20], RunOptions { record_bits: true, ..Default::default() }).unwrap();
        assert!(trace.features.iter().all(|&v| v == 1.0));
        assert_eq!(trace.bits(5, 0), Some(vec![0, 0, 0, 0]));
    }

    #[test]
    fn cached_path_matches_gate_path() {
        let r = QuantumReservoir::new(QrcConfig { seed: 3, ..Default::default() }).unwrap();
        let cache = r.step_matrices();
        for index in 0..16 {
            for &u in &[0.0, 0.21, 0.5] {
                let slow = r.step(&QuantumState::basis(4, index), u, &bits_of(index, 4)).unwrap();
                let fast = apply_cached(&cache[index], &input_block(u, 1.0), index, 4);
                for (a, b) in slow.amplitudes().iter().zip(&fast) {
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn features_bounded_and_deterministic() {
        let cfg = QrcConfig { n_shots: 50, seed: 1, ..Default::default() };
        let r = QuantumReservoir::new(cfg).unwrap();
        let u: Vec<f64> = (0..60).map(|t| 0.5 * ((t as f64) * 0.7).sin().abs()).collect();
        let a = r.run(&u).unwrap();
        let b = r.run(&u).unwrap();
        assert_eq!(a, b);
        assert!(a.features.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn feature_is_mean_of_mapped_bits() {
        let cfg = QrcConfig { n_shots: 17, seed: 5, ..Default::default() };
        let r = QuantumReservoir::new(cfg).unwrap();
        let u = [0.1, 0.4, 0.25, 0.0, 0.33];
        let trace = r.run_with(&u, RunOptions { record_bits: true, ..Default::default() }).unwrap();
        for t in 0..u.len() {
            for q in 0..4 {
                let mean: f64 = (0..17)
                    .map(|s| 1.0 - 2.0 * trace.bits(t, s).unwrap()[q] as f64)
                    .sum::<f64>()
                    / 17.0;
                assert!((trace.features[(t, q)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_csv_header() {
        let cfg = QrcConfig { n_shots: 2, ..Default::default() };
        let trace = QuantumReservoir::new(cfg).unwrap().run(&[0.1, 0.2]).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z0,z1,z2,z3\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
