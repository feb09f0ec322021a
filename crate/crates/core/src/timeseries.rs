//! NARMA-10 sequence generation and train/eval windowing.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BenchError, Result};
use crate::seed::rng_from_seed;

/// Order of the NARMA recursion.
pub const NARMA_ORDER: usize = 10;

/// Inputs are drawn uniformly from `[0, INPUT_MAX]`.
pub const INPUT_MAX: f64 = 0.5;

/// Any |y| above this is treated as a diverged sequence.
pub const DIVERGENCE_BOUND: f64 = 10.0;

const MAX_RESEEDS: u64 = 1000;

/// Scalar input/target pair of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Seed that actually produced `u`.
    pub seed: u64,
    /// Seed originally requested; differs from `seed` when a diverged draw was replaced.
    pub requested_seed: u64,
}

impl Series {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Builds a series from a given input sequence by running the recursion.
    pub fn from_inputs(u: Vec<f64>) -> Result<Self> {
        let y = narma10_response(&u)?;
        Ok(Series { u, y, seed: 0, requested_seed: 0 })
    }

    pub fn reseeded(&self) -> bool {
        self.seed != self.requested_seed
    }

    /// Writes `t,u,y` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,u,y")?;
        for (t, (u, y)) in self.u.iter().zip(&self.y).enumerate() {
            writeln!(out, "{t},{u:.16e},{y:.16e}")?;
        }
        Ok(())
    }
}

/// Runs the NARMA-10 recursion
/// `y[t+1] = 0.3 y[t] + 0.05 y[t] sum(y[t-9..=t]) + 1.5 u[t-9] u[t] + 0.1`
/// with `y[0] = 0` and all pre-history zero.
pub fn narma10_response(u: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; u.len()];
    for t in 0..u.len().saturating_sub(1) {
        let lo = t.saturating_sub(NARMA_ORDER - 1);
        let window_sum: f64 = y[lo..=t].iter().sum();
        let delayed = if t >= NARMA_ORDER - 1 { u[t - (NARMA_ORDER - 1)] } else { 0.0 };
        let next = 0.3 * y[t] + 0.05 * y[t] * window_sum + 1.5 * delayed * u[t] + 0.1;
        if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
            return Err(BenchError::Diverged(format!(
                "NARMA-10 output {next} at step {} exceeds bound {DIVERGENCE_BOUND}",
                t + 1
            )));
        }
        y[t + 1] = next;
    }
    Ok(y)
}

fn draw_inputs(length: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..length).map(|_| rng.random_range(0.0..=INPUT_MAX)).collect()
}

/// Generates a seeded NARMA-10 series. A diverged draw is replaced by the
/// draw for `seed + 1` (and so on); the substitution is recorded in the result.
pub fn generate_narma10(length: usize, seed: u64) -> Result<Series> {
    if length <= NARMA_ORDER {
        return Err(invalid(format!("series length must exceed {NARMA_ORDER}, got {length}")));
    }
    for offset in 0..MAX_RESEEDS {
        let actual = seed.wrapping_add(offset);
        let u = draw_inputs(length, actual);
        match narma10_response(&u) {
            Ok(y) => {
                if offset > 0 {
                    log::warn!("NARMA-10 draw for seed {seed} diverged; using seed {actual}");
                }
                return Ok(Series { u, y, seed: actual, requested_seed: seed });
            }
            Err(BenchError::Diverged(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(BenchError::Diverged(format!(
        "no stable NARMA-10 draw within {MAX_RESEEDS} seeds of {seed}"
    )))
}

/// Train/eval layout over a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_eval: usize,
    pub washout: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { n_train: 2000, n_eval: 1000, washout: 100 }
    }
}

impl SplitSpec {
    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.washout >= self.n_train {
            return Err(invalid(format!(
                "washout {} must be smaller than n_train {}",
                self.washout, self.n_train
            )));
        }
        if self.n_eval == 0 {
            return Err(invalid("n_eval must be positive"));
        }
        if self.n_train + self.n_eval > series_len {
            return Err(invalid(format!(
                "n_train + n_eval = {} exceeds series length {series_len}",
                self.n_train + self.n_eval
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_eval
    }
}

/// Contiguous slice of a series. `washout` leading steps are flagged as
/// transient and excluded from readout fitting.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub u: &'a [f64],
    pub y: &'a [f64],
    /// Index of the first step within the parent series.
    pub offset: usize,
    pub washout: usize,
}

impl<'a> SeriesView<'a> {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn is_washout(&self, local_step: usize) -> bool {
        local_step < self.washout
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Splits into `[0, n_train)` and `[n_train, n_train + n_eval)`.
pub fn split<'a>(series: &'a Series, spec: &SplitSpec) -> Result<(SeriesView<'a>, SeriesView<'a>)> {
    spec.validate(series.len())?;
    let train = SeriesView {
        u: &series.u[..spec.n_train],
        y: &series.y[..spec.n_train],
        offset: 0,
        washout: spec.washout,
    };
    let end = spec.total();
    let eval = SeriesView {
        u: &series.u[spec.n_train..end],
        y: &series.y[spec.n_train..end],
        offset: spec.n_train,
        washout: 0,
    };
    Ok((train, eval))
}
