//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;

/// Straight transcription of the NARMA-10 recursion with explicit loops and
/// zero pre-history.
pub fn naive_narma10(u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    let past = |v: &[f64], t: usize, i: usize| if t >= i { v[t - i] } else { 0.0 };
    for t in 0..u.len() - 1 {
        let mut window = 0.0;
        for i in 0..10 {
            window += past(&y, t, i);
        }
        y[t + 1] = 0.3 * y[t] + 0.05 * y[t] * window + 1.5 * past(u, t, 9) * u[t] + 0.1;
    }
    y
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn mat2(m: [[C64; 2]; 2]) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |r, k| m[r][k])
}

pub fn rx(theta: f64) -> DMatrix<C64> {
    let (s, co) = (theta / 2.0).sin_cos();
    mat2([[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]])
}

pub fn rz(theta: f64) -> DMatrix<C64> {
    let h = theta / 2.0;
    mat2([[C64::from_polar(1.0, -h), c(0.0, 0.0)], [c(0.0, 0.0), C64::from_polar(1.0, h)]])
}

/// `I ⊗ … ⊗ G ⊗ … ⊗ I`, highest qubit leftmost so qubit 0 is the least significant bit.
pub fn embed_one(g: &DMatrix<C64>, target: usize, n: usize) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(2, 2);
    let mut full = DMatrix::<C64>::identity(1, 1);
    for q in (0..n).rev() {
        full = full.kronecker(if q == target { g } else { &id });
    }
    full
}

/// CNOT as a permutation of computational basis states.
pub fn cnot_full(control: usize, target: usize, n: usize) -> DMatrix<C64> {
    let dim = 1 << n;
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let row = if col >> control & 1 == 1 { col ^ (1 << target) } else { col };
        m[(row, col)] = c(1.0, 0.0);
    }
    m
}

/// Two-qubit gate with local index `2·bit(first) + bit(second)`.
pub fn two_qubit_full(g: &DMatrix<C64>, first: usize, second: usize, n: usize) -> DMatrix<C64> {
    let dim = 1 << n;
    let mask = (1 << first) | (1 << second);
    DMatrix::from_fn(dim, dim, |r, k| {
        if r & !mask != k & !mask {
            return c(0.0, 0.0);
        }
        let local = |i: usize| 2 * (i >> first & 1) + (i >> second & 1);
        g[(local(r), local(k))]
    })
}

/// `CNOT · (I ⊗ Rz(α)) · CNOT · (Rx(α) ⊗ Rx(α))` with the first qubit as control
/// and the left tensor factor.
pub fn block_oracle(alpha: f64) -> DMatrix<C64> {
    let cnot = cnot_full(1, 0, 2);
    let rz_t = DMatrix::<C64>::identity(2, 2).kronecker(&rz(alpha));
    let rx_both = rx(alpha).kronecker(&rx(alpha));
    &cnot * rz_t * &cnot * rx_both
}

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..1 << n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

pub fn max_dev(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn mat_vec(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    (m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
}

/// `⟨σz⟩` per qubit of a statevector.
pub fn z_expectations(amps: &[C64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| amps.iter().enumerate().map(|(i, a)| if i >> q & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() }).sum())
        .collect()
}

/// Central finite difference of `f` at `x` in coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let fp = f(&p);
    p[i] = x[i] - h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn nrmse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let mse = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    (mse / var).sqrt()
}
