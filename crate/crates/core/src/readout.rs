//! Closed-form linear readout shared by the reservoir models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative threshold on `|R_ii|` below which the design matrix is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Per-step reservoir observations, optionally with a trailing bias column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirFeatures {
    matrix: DMatrix<f64>,
    washout: usize,
    has_bias: bool,
}

impl ReservoirFeatures {
    /// Appends a column of ones to `states`.
    pub fn with_bias(states: DMatrix<f64>, washout: usize) -> Self {
        let rows = states.nrows();
        let cols = states.ncols();
        let matrix = states.insert_column(cols, 1.0);
        debug_assert_eq!(matrix.nrows(), rows);
        ReservoirFeatures { matrix, washout, has_bias: true }
    }

    /// Uses `matrix` as the design matrix verbatim.
    pub fn raw(matrix: DMatrix<f64>, washout: usize) -> Self {
        ReservoirFeatures { matrix, washout, has_bias: false }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn washout(&self) -> usize {
        self.washout
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    /// Number of reservoir features, excluding the bias column.
    pub fn feature_dim(&self) -> usize {
        self.ncols() - usize::from(self.has_bias)
    }

    /// Copies rows `range` with a new washout count.
    pub fn window(&self, range: std::ops::Range<usize>, washout: usize) -> Result<Self> {
        if range.end > self.nrows() || range.start > range.end {
            return Err(invalid(format!("row range {range:?} outside {} rows", self.nrows())));
        }
        let matrix = self.matrix.rows(range.start, range.len()).into_owned();
        Ok(ReservoirFeatures { matrix, washout, has_bias: self.has_bias })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedReadout {
    pub weights: Vec<f64>,
    pub ridge: f64,
    pub feature_dim: usize,
    /// True when the least-squares problem was rank deficient and solved by SVD.
    pub rank_deficient: bool,
}

impl TrainedReadout {
    pub fn n_params(&self) -> usize {
        self.weights.len()
    }
}

/// Minimises `‖Xw − y‖² + λ‖w‖²` over the post-washout rows of `features`.
/// `targets` are aligned with all rows of `features`.
pub fn fit_readout(features: &ReservoirFeatures, targets: &[f64], ridge: f64) -> Result<TrainedReadout> {
    if targets.len() != features.nrows() {
        return Err(invalid(format!(
            "{} targets for {} feature rows",
            targets.len(),
            features.nrows()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(invalid(format!("ridge coefficient must be finite and non-negative, got {ridge}")));
    }
    let skip = features.washout();
    let rows = features.nrows().saturating_sub(skip);
    let cols = features.ncols();
    if rows < cols {
        return Err(invalid(format!("{rows} post-washout rows cannot determine {cols} weights")));
    }
    let x = features.matrix().rows(skip, rows);
    let y = DVector::from_column_slice(&targets[skip..]);

    // Ridge as an augmented least-squares problem [X; √λ I] w ≈ [y; 0].
    let (a, b) = if ridge > 0.0 {
        let mut a = DMatrix::zeros(rows + cols, cols);
        a.rows_mut(0, rows).copy_from(&x);
        let s = ridge.sqrt();
        for j in 0..cols {
            a[(rows + j, j)] = s;
        }
        let mut b = DVector::zeros(rows + cols);
        b.rows_mut(0, rows).copy_from(&y);
        (a, b)
    } else {
        (x.into_owned(), y)
    };

    let (weights, rank_deficient) = solve_least_squares(a, b);
    if rank_deficient {
        log::warn!("readout design matrix is rank deficient; using minimum-norm solution");
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(crate::BenchError::Diverged("readout weights are not finite".into()));
    }
    Ok(TrainedReadout {
        weights: weights.iter().copied().collect(),
        ridge,
        feature_dim: features.feature_dim(),
        rank_deficient,
    })
}

fn solve_least_squares(a: DMatrix<f64>, mut b: DVector<f64>) -> (DVector<f64>, bool) {
    let cols = a.ncols();
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let deficient = diag_max == 0.0 || (0..cols).any(|i| r[(i, i)].abs() <= RANK_TOL * diag_max);
    if deficient {
        let svd = a.svd(true, true);
        let eps = RANK_TOL * svd.singular_values.max();
        let w = svd.solve(&b, eps).expect("SVD computed with U and V");
        return (w, true);
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, cols).into_owned();
    let w = r
        .solve_upper_triangular(&rhs)
        .expect("full-rank upper triangular system");
    (w, false)
}

/// `ŷ = X w` for every row of `features`.
pub fn apply_readout(readout: &TrainedReadout, features: &ReservoirFeatures) -> Result<Vec<f64>> {
    if features.ncols() != readout.weights.len() {
        return Err(invalid(format!(
            "readout has {} weights but features have {} columns",
            readout.weights.len(),
            features.ncols()
        )));
    }
    let w = DVector::from_column_slice(&readout.weights);
    Ok((features.matrix() * w).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn identity_design_reproduces_targets() {
        let y = vec![0.3, -1.2, 4.0];
        let f = ReservoirFeatures::raw(DMatrix::identity(3, 3), 0);
        let r = fit_readout(&f, &y, 0.0).unwrap();
        for (w, t) in r.weights.iter().zip(&y) {
            assert!((w - t).abs() < 1e-12);
        }
    }

    #[test]
    fn single_feature_closed_form() {
        let x = [1.0, 2.0, -0.5, 3.0];
        let y = [2.1, 3.9, -1.2, 6.3];
        let f = ReservoirFeatures::raw(DMatrix::from_column_slice(4, 1, &x), 0);
        let r = fit_readout(&f, &y, 0.0).unwrap();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        assert!((r.weights[0] - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let (x, y) = random_problem(40, 5, 1);
        let f = ReservoirFeatures::raw(x, 0);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6] {
            let w = fit_readout(&f, &y, lambda).unwrap().weights;
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12, "norm grew at λ={lambda}");
            last = norm;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn normal_equations_hold() {
        let (x, y) = random_problem(200, 12, 2);
        for lambda in [0.0, 1e-8, 0.5] {
            let f = ReservoirFeatures::with_bias(x.clone(), 10);
            let r = fit_readout(&f, &y, lambda).unwrap();
            let xm = f.matrix().rows(10, 190);
            let yv = DVector::from_column_slice(&y[10..]);
            let w = DVector::from_column_slice(&r.weights);
            let grad = xm.transpose() * (&xm * &w - &yv) + &w * lambda;
            let scale = (xm.transpose() * &yv).norm();
            assert!(grad.norm() <= 1e-8 * scale, "λ={lambda}: {}", grad.norm());
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let (x, y) = random_problem(50, 4, 3);
        let a = fit_readout(&ReservoirFeatures::raw(x.clone(), 0), &y, 1e-6).unwrap();
        let perm: Vec<usize> = (0..50).rev().collect();
        let xp = DMatrix::from_fn(50, 4, |i, j| x[(perm[i], j)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let b = fit_readout(&ReservoirFeatures::raw(xp, 0), &yp, 1e-6).unwrap();
        for (p, q) in a.weights.iter().zip(&b.weights) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_uses_min_norm() {
        // Duplicate column: minimum-norm solution splits the weight evenly.
        let col: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let mut data = col.clone();
        data.extend(&col);
        let x = DMatrix::from_column_slice(10, 2, &data);
        let y: Vec<f64> = col.iter().map(|v| 2.0 * v).collect();
        let r = fit_readout(&ReservoirFeatures::raw(x, 0), &y, 0.0).unwrap();
        assert!(r.rank_deficient);
        assert!((r.weights[0] - 1.0).abs() < 1e-9);
        assert!((r.weights[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn apply_matches_matmul_and_checks_width() {
        let (x, y) = random_problem(30, 3, 4);
        let f = ReservoirFeatures::with_bias(x.clone(), 0);
        let r = fit_readout(&f, &y, 0.0).unwrap();
        let pred = apply_readout(&r, &f).unwrap();
        for (i, p) in pred.iter().enumerate() {
            let manual: f64 = (0..3).map(|j| x[(i, j)] * r.weights[j]).sum::<f64>() + r.weights[3];
            assert!((p - manual).abs() < 1e-12);
        }
        let zero = TrainedReadout { weights: vec![0.0; 4], ridge: 0.0, feature_dim: 3, rank_deficient: false };
        assert!(apply_readout(&zero, &f).unwrap().iter().all(|&p| p == 0.0));
        let narrow = ReservoirFeatures::raw(x, 0);
        assert!(apply_readout(&r, &narrow).is_err());
    }

    #[test]
    fn too_few_rows_rejected() {
        let (x, y) = random_problem(5, 4, 5);
        let f = ReservoirFeatures::with_bias(x, 2);
        assert!(fit_readout(&f, &y, 0.0).is_err());
    }
}
