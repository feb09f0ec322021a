//! Dense statevector simulator for a handful of qubits.
//!
//! Qubit 0 is the least significant bit of the basis-state index. Two-qubit
//! gate matrices use textbook ordering over `(first, second)`: the local
//! 4-dimensional index is `2 * bit(first) + bit(second)`, so `A ⊗ B` acts with
//! `A` on `first` and `B` on `second`.
//!
//! Rotations follow `Rx(θ) = exp(-iθX/2)` and `Rz(θ) = exp(-iθZ/2)`.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::seed::rng_from_seed;

pub type C64 = Complex64;

const NORM_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

pub fn rx(theta: f64) -> Matrix2<C64> {
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = C64::new(0.0, -(theta / 2.0).sin());
    Matrix2::new(c, s, s, c)
}

pub fn rz(theta: f64) -> Matrix2<C64> {
    Matrix2::new(C64::from_polar(1.0, -theta / 2.0), ZERO, ZERO, C64::from_polar(1.0, theta / 2.0))
}

pub fn hadamard() -> Matrix2<C64> {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Matrix2::new(h, h, h, -h)
}

pub fn identity2() -> Matrix2<C64> {
    Matrix2::identity()
}

/// CNOT with `first` as control and `second` as target.
pub fn cnot4() -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = ONE;
    m[(1, 1)] = ONE;
    m[(2, 3)] = ONE;
    m[(3, 2)] = ONE;
    m
}

/// Kronecker product `a ⊗ b` of two single-qubit gates.
pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    m
}

/// Basis index to per-qubit bits, qubit 0 first.
pub fn bits_of(index: usize, n_qubits: usize) -> Vec<u8> {
    (0..n_qubits).map(|q| ((index >> q) & 1) as u8).collect()
}

pub fn index_of(bits: &[u8]) -> usize {
    bits.iter().enumerate().fold(0, |acc, (q, &b)| acc | ((b as usize & 1) << q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<C64>,
    n_qubits: usize,
}

impl QuantumState {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let dim = 1usize << n_qubits;
        assert!(index < dim, "basis index {index} out of range for {n_qubits} qubits");
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        QuantumState { amplitudes, n_qubits }
    }

    /// Wraps amplitudes, rejecting non-power-of-two lengths and unnormalized vectors.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(invalid(format!("amplitude vector length {dim} is not a power of two")));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("state norm {norm} differs from 1")));
        }
        Ok(QuantumState { amplitudes, n_qubits: dim.trailing_zeros() as usize })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(invalid(format!("qubit {q} out of range for {} qubits", self.n_qubits)));
        }
        Ok(())
    }

    pub fn apply_one_qubit(&mut self, gate: &Matrix2<C64>, target: usize) -> Result<()> {
        self.check_qubit(target)?;
        let mask = 1usize << target;
        for i0 in 0..self.dim() {
            if i0 & mask != 0 {
                continue;
            }
            let i1 = i0 | mask;
            let (a0, a1) = (self.amplitudes[i0], self.amplitudes[i1]);
            self.amplitudes[i0] = gate[(0, 0)] * a0 + gate[(0, 1)] * a1;
            self.amplitudes[i1] = gate[(1, 0)] * a0 + gate[(1, 1)] * a1;
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(invalid("CNOT control and target must differ"));
        }
        let (cm, tm) = (1usize << control, 1usize << target);
        for i in 0..self.dim() {
            if i & cm != 0 && i & tm == 0 {
                self.amplitudes.swap(i, i | tm);
            }
        }
        Ok(())
    }

    /// Applies a 4×4 gate to the ordered pair `(first, second)`.
    pub fn apply_two_qubit(&mut self, gate: &Matrix4<C64>, first: usize, second: usize) -> Result<()> {
        self.check_qubit(first)?;
        self.check_qubit(second)?;
        if first == second {
            return Err(invalid("two-qubit gate needs distinct qubits"));
        }
        let (fm, sm) = (1usize << first, 1usize << second);
        for base in 0..self.dim() {
            if base & (fm | sm) != 0 {
                continue;
            }
            let idx = [base, base | sm, base | fm, base | fm | sm];
            let old = idx.map(|i| self.amplitudes[i]);
            for (row, &i) in idx.iter().enumerate() {
                self.amplitudes[i] = (0..4).map(|col| gate[(row, col)] * old[col]).sum();
            }
        }
        Ok(())
    }

    pub fn apply_unitary(&mut self, unitary: &Unitary) -> Result<()> {
        if unitary.n_qubits != self.n_qubits {
            return Err(invalid(format!(
                "unitary on {} qubits applied to {}-qubit state",
                unitary.n_qubits, self.n_qubits
            )));
        }
        let m = &unitary.matrix;
        let next: Vec<C64> = (0..self.dim())
            .map(|r| (0..self.dim()).map(|c| m[(r, c)] * self.amplitudes[c]).sum())
            .collect();
        self.amplitudes = next;
        Ok(())
    }

    /// Exact `⟨σz⟩` for every qubit.
    pub fn pauli_z_expectations(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n_qubits];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, zq) in z.iter_mut().enumerate() {
                if (i >> q) & 1 == 0 {
                    *zq += p;
                } else {
                    *zq -= p;
                }
            }
        }
        z
    }

    /// Samples a computational-basis outcome; returns its index and the collapsed state.
    pub fn measure_all<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, QuantumState) {
        let outcome = sample_index(&self.amplitudes, rng);
        (outcome, QuantumState::basis(self.n_qubits, outcome))
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(amplitudes: &[C64], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, a) in amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if r < acc {
            return i;
        }
    }
    // Rounding left `acc` marginally below 1.
    last_nonzero
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    matrix: DMatrix<C64>,
    n_qubits: usize,
}

impl Unitary {
    pub fn identity(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        Unitary { matrix: DMatrix::identity(dim, dim), n_qubits }
    }

    /// Wraps a square matrix after checking `U U† = I` within `1e-9`.
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || dim == 0 || !dim.is_power_of_two() {
            return Err(invalid(format!("{}x{} is not a qubit unitary shape", dim, matrix.ncols())));
        }
        let u = Unitary { matrix, n_qubits: dim.trailing_zeros() as usize };
        let dev = u.unitarity_deviation();
        if dev > 1e-9 {
            return Err(invalid(format!("matrix deviates from unitarity by {dev}")));
        }
        Ok(u)
    }

    /// Dense embedding of a two-qubit gate on `(first, second)` into `n_qubits`.
    pub fn from_two_qubit(gate: &Matrix4<C64>, first: usize, second: usize, n_qubits: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        let mut matrix = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut s = QuantumState::basis(n_qubits, col);
            s.apply_two_qubit(gate, first, second)?;
            for (row, a) in s.amplitudes.iter().enumerate() {
                matrix[(row, col)] = *a;
            }
        }
        Ok(Unitary { matrix, n_qubits })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dagger(&self) -> Unitary {
        Unitary { matrix: self.matrix.adjoint(), n_qubits: self.n_qubits }
    }

    /// `self · rhs` (rhs acts first).
    pub fn compose(&self, rhs: &Unitary) -> Unitary {
        Unitary { matrix: &self.matrix * &rhs.matrix, n_qubits: self.n_qubits }
    }

    /// Max-entry deviation of `U U†` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let prod = &self.matrix * self.matrix.adjoint();
        let dim = prod.nrows();
        let mut worst: f64 = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((prod[(r, c)] - target).norm());
            }
        }
        worst
    }
}

/// Haar-distributed unitary on `n_qubits`: QR of a complex Ginibre matrix with
/// the phases of `R`'s diagonal folded back into `Q`.
pub fn haar_random_unitary(n_qubits: usize, seed: u64) -> Result<Unitary> {
    if n_qubits == 0 {
        return Err(invalid("Haar unitary needs at least one qubit"));
    }
    let dim = 1usize << n_qubits;
    let mut rng = rng_from_seed(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let ginibre = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let qr = ginibre.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    Unitary::from_matrix(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn rx_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = random_state(3, &mut rng);
        let mut s = s0.clone();
        s.apply_one_qubit(&rx(0.0), 1).unwrap();
        assert_eq!(s, s0);
    }

    #[test]
    fn rz_on_zero_is_phase_only() {
        let mut s = QuantumState::zero(2);
        s.apply_one_qubit(&rz(1.3), 0).unwrap();
        assert!((s.probabilities()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rx_pi_flips() {
        let mut s = QuantumState::zero(1);
        s.apply_one_qubit(&rx(PI), 0).unwrap();
        assert!((s.probabilities()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn target_out_of_range() {
        let mut s = QuantumState::zero(2);
        assert!(s.apply_one_qubit(&rx(0.1), 2).is_err());
        assert!(s.apply_cnot(0, 0).is_err());
        assert!(s.apply_cnot(0, 5).is_err());
    }

    #[test]
    fn cnot_basis_cases() {
        let mut s = QuantumState::zero(2);
        s.apply_cnot(0, 1).unwrap();
        assert_eq!(s, QuantumState::zero(2));
        // qubit 0 set: index 0b01
        let mut s = QuantumState::basis(2, 0b01);
        s.apply_cnot(0, 1).unwrap();
        assert_eq!(s, QuantumState::basis(2, 0b11));
    }

    #[test]
    fn lsb_convention() {
        let mut s = QuantumState::zero(3);
        s.apply_one_qubit(&rx(PI), 0).unwrap();
        assert!((s.probabilities()[1] - 1.0).abs() < 1e-15);
        assert_eq!(bits_of(0b110, 3), vec![0, 1, 1]);
        assert_eq!(index_of(&[0, 1, 1]), 0b110);
    }

    #[test]
    fn z_expectations() {
        assert_eq!(QuantumState::zero(4).pauli_z_expectations(), vec![1.0; 4]);
        let z = QuantumState::basis(4, 1 << 2).pauli_z_expectations();
        assert_eq!(z, vec![1.0, 1.0, -1.0, 1.0]);
        let mut s = QuantumState::zero(2);
        s.apply_one_qubit(&hadamard(), 1).unwrap();
        let z = s.pauli_z_expectations();
        assert!(z[1].abs() < 1e-12);
        assert!((z[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measuring_basis_state_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = QuantumState::zero(4);
        for _ in 0..100 {
            let (bits, collapsed) = s.measure_all(&mut rng);
            assert_eq!(bits, 0);
            assert_eq!(collapsed, s);
        }
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(QuantumState::from_amplitudes(vec![ONE, ONE]).is_err());
        assert!(QuantumState::from_amplitudes(vec![ONE, ZERO, ZERO]).is_err());
    }

    #[test]
    fn haar_is_unitary_and_deterministic() {
        for n in 1..=5 {
            let u = haar_random_unitary(n, 42).unwrap();
            assert!(u.unitarity_deviation() <= 1e-9);
        }
        assert_eq!(haar_random_unitary(3, 9).unwrap(), haar_random_unitary(3, 9).unwrap());
        assert_ne!(haar_random_unitary(3, 9).unwrap(), haar_random_unitary(3, 10).unwrap());
    }

    pub(crate) fn random_state(n: usize, rng: &mut ChaCha8Rng) -> QuantumState {
        let mut amps: Vec<C64> = (0..1usize << n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        QuantumState::from_amplitudes(amps).unwrap()
    }
}
