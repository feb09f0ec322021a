mod common;

use common::*;
use nalgebra::{DMatrix, Matrix4};
use narmabench::quantum::{haar_random_unitary, QuantumState, Unitary};
use narmabench::qrc::{block_at_angle, feedback_block, input_block, MeasurementMode, QrcConfig, QuantumReservoir, RunOptions};
use narmabench::seed::rng_from_seed;
use num_complex::Complex64 as C64;
use rand::Rng;
use std::f64::consts::FRAC_PI_2;

fn dyn4(m: &Matrix4<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(4, 4, |r, k| m[(r, k)])
}

fn dev(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn blocks_match_matrix_product_oracle() {
    assert!(dev(&dyn4(&block_at_angle(FRAC_PI_2)), &block_oracle(FRAC_PI_2)) <= 1e-12);
    assert!(dev(&dyn4(&input_block(0.5, FRAC_PI_2 * 2.0)), &block_oracle(FRAC_PI_2)) <= 1e-12);
    assert!(dev(&dyn4(&feedback_block(0, 2.2)), &block_oracle(2.2)) <= 1e-12);
    assert_eq!(feedback_block(1, 2.2), block_at_angle(-2.2));
    let id = DMatrix::<C64>::identity(4, 4);
    assert!(dev(&dyn4(&input_block(0.0, 1.0)), &id) <= 1e-15);
    assert!(dev(&dyn4(&input_block(0.4, 0.0)), &id) <= 1e-15);
    assert!(dev(&dyn4(&feedback_block(1, 0.0)), &id) <= 1e-15);
}

#[test]
fn step_matches_dense_oracle() {
    let mut rng = rng_from_seed(21);
    for case in 0..20u64 {
        let config = QrcConfig { seed: case, ..Default::default() };
        let reservoir = QuantumReservoir::new(config.clone()).unwrap();
        let basis = if case == 0 { 0 } else { rng.random_range(0..16) };
        let bits: Vec<u8> = (0..4).map(|_| rng.random_range(0..2)).collect();
        let u = rng.random_range(0.0..0.5);

        let mut total = two_qubit_full(&block_oracle(config.a_in * u), 0, 1, 4);
        for (j, &b) in bits.iter().enumerate() {
            let angle = if b == 0 { config.a_fb } else { -config.a_fb };
            total = two_qubit_full(&block_oracle(angle), j, (j + 1) % 4, 4) * total;
        }
        total = reservoir.unitary().matrix() * total;
        let mut e = vec![c(0.0, 0.0); 16];
        e[basis] = c(1.0, 0.0);
        let oracle = mat_vec(&total, &e);

        let got = reservoir.step(&QuantumState::basis(4, basis), u, &bits).unwrap();
        assert!(max_dev(got.amplitudes(), &oracle) <= 1e-12, "case {case}");
    }
}

#[test]
fn zero_scales_reduce_to_reservoir_unitary() {
    let config = QrcConfig { a_in: 0.0, a_fb: 0.0, ..Default::default() };
    let u_res = haar_random_unitary(4, 3).unwrap();
    let r = QuantumReservoir::with_unitary(config, u_res.clone()).unwrap();
    let mut rng = rng_from_seed(22);
    let amps = random_state(4, &mut rng);
    let s = QuantumState::from_amplitudes(amps.clone()).unwrap();
    let got = r.step(&s, 0.37, &[1, 0, 1, 1]).unwrap();
    assert!(max_dev(got.amplitudes(), &mat_vec(u_res.matrix(), &amps)) <= 1e-12);
}

#[test]
fn identity_reservoir_depends_only_on_input() {
    let config = QrcConfig { a_fb: 0.0, ..Default::default() };
    let r = QuantumReservoir::with_unitary(config, Unitary::identity(4)).unwrap();
    let s = QuantumState::zero(4);
    let a = r.step(&s, 0.3, &[0, 0, 0, 0]).unwrap();
    let b = r.step(&s, 0.3, &[1, 1, 0, 1]).unwrap();
    assert_eq!(a, b);
    let oracle = mat_vec(&two_qubit_full(&block_oracle(0.3), 0, 1, 4), s.amplitudes());
    assert!(max_dev(a.amplitudes(), &oracle) <= 1e-12);
}

fn drive(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.random_range(0.0..=0.5)).collect()
}

#[test]
fn doubling_shots_stays_within_standard_error() {
    let u = drive(60, 5);
    for seed in 0..20 {
        let n = 200;
        let small = QuantumReservoir::new(QrcConfig { seed, n_shots: n, ..Default::default() }).unwrap();
        let large = QuantumReservoir::new(QrcConfig { seed, n_shots: 2 * n, ..Default::default() }).unwrap();
        let opts = RunOptions { record_bits: true, ..Default::default() };
        let a = small.run_with(&u, opts).unwrap();
        let b = large.run_with(&u, opts).unwrap();
        for t in [0, 30, 59] {
            assert_eq!(a.bits(t, n - 1), b.bits(t, n - 1), "shared shots must coincide");
        }
        let diff = (&a.features - &b.features).abs().mean();
        assert!(diff <= 1.0 / (n as f64).sqrt(), "seed {seed}: mean |Δ| {diff}");
    }
}

#[test]
fn exact_mode_tracks_shot_average() {
    let u = drive(200, 6);
    let n_shots = 400;
    for seed in 0..3 {
        let base = QrcConfig { seed, n_shots, a_fb: 0.0, ..Default::default() };
        let shots = QuantumReservoir::new(base.clone()).unwrap().run(&u).unwrap();
        let exact = QuantumReservoir::new(QrcConfig { mode: MeasurementMode::Exact, ..base }).unwrap().run(&u).unwrap();
        let diff = (&shots.features - &exact.features).abs().mean();
        assert!(diff <= 3.0 / (n_shots as f64).sqrt(), "seed {seed}: {diff}");
    }
}

#[test]
fn initial_bits_are_forgotten() {
    let u = drive(400, 7);
    for seed in 0..5 {
        let r = QuantumReservoir::new(QrcConfig { seed, n_shots: 500, ..Default::default() }).unwrap();
        let a = r.run_with(&u, RunOptions { initial_index: 0, record_bits: false }).unwrap();
        let b = r.run_with(&u, RunOptions { initial_index: 15, record_bits: false }).unwrap();
        let d = (&a.features - &b.features).abs();
        let early = d.rows(0, 100).mean();
        let late = d.rows(300, 100).mean();
        assert!(late < early, "seed {seed}: early {early}, late {late}");
    }
}

#[test]
fn features_are_bounded_and_reproducible() {
    let u = drive(100, 8);
    let config = QrcConfig { n_shots: 50, seed: 9, ..Default::default() };
    let a = QuantumReservoir::new(config.clone()).unwrap().run(&u).unwrap();
    let b = QuantumReservoir::new(config).unwrap().run(&u).unwrap();
    assert_eq!(a, b);
    assert!(a.features.iter().all(|v| (-1.0..=1.0).contains(v)));
}
