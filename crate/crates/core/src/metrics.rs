//! Accuracy, cost and composite metrics used to compare the models.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, BenchError, Result};
use crate::esn::EsnConfig;
use crate::qrc::QrcConfig;
use crate::readout::{apply_readout, fit_readout, ReservoirFeatures};
use crate::{qlstm, recurrent};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid(format!(
            "prediction/truth lengths {} and {} must match and be nonzero",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (1/N) standard deviation.
pub fn std_population(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// RMSE divided by the population standard deviation of `truth`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let r = rmse(pred, truth)?;
    let sigma = std_population(truth);
    if sigma == 0.0 {
        return Err(BenchError::UndefinedMetric("NRMSE of a constant target".into()));
    }
    Ok(r / sigma)
}

/// Squared Pearson correlation; zero when either side has no variance.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= f64::EPSILON * a.len() as f64 * ma.abs().max(1.0) || sbb <= 0.0 {
        return 0.0;
    }
    (sab * sab) / (saa * sbb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryCapacitySpec {
    pub k_max: usize,
    pub probe_length: usize,
    /// Leading rows skipped before the fit/held-out split.
    pub washout: usize,
    pub ridge: f64,
}

impl Default for MemoryCapacitySpec {
    fn default() -> Self {
        MemoryCapacitySpec { k_max: 20, probe_length: 2000, washout: 100, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCapacity {
    pub total: f64,
    /// `r²` for delays `1..=k_max`.
    pub per_delay: Vec<f64>,
}

/// `MC = Σ_{k=1..k_max} r²_k`, where `r²_k` is the held-out squared correlation
/// between `u_{t−k}` and its linear reconstruction from the features at `t`.
/// The usable rows are split in half: first half fits, second half scores.
pub fn memory_capacity<F>(runner: F, probe: &[f64], spec: &MemoryCapacitySpec) -> Result<MemoryCapacity>
where
    F: FnOnce(&[f64]) -> Result<ReservoirFeatures>,
{
    let k_max = spec.k_max;
    let first = spec.washout.max(k_max);
    if k_max == 0 || probe.len() < first + 2 * 20 {
        return Err(invalid(format!("probe of {} steps too short for k_max {k_max}", probe.len())));
    }
    let features = runner(probe)?;
    if features.nrows() != probe.len() {
        return Err(invalid("runner returned a feature matrix of the wrong length"));
    }
    let mid = first + (probe.len() - first) / 2;
    let fit_rows = features.window(first..mid, 0)?;
    let test_rows = features.window(mid..probe.len(), 0)?;
    let mut per_delay = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let fit_target: Vec<f64> = (first..mid).map(|t| probe[t - k]).collect();
        let test_target: Vec<f64> = (mid..probe.len()).map(|t| probe[t - k]).collect();
        let r2 = match fit_readout(&fit_rows, &fit_target, spec.ridge) {
            Ok(readout) => squared_correlation(&apply_readout(&readout, &test_rows)?, &test_target),
            Err(BenchError::InvalidArgument(msg)) => return Err(invalid(msg)),
            Err(_) => 0.0,
        };
        per_delay.push(r2);
    }
    Ok(MemoryCapacity { total: per_delay.iter().sum(), per_delay })
}

/// What is counted for a model's trainable-parameter figure.
#[derive(Debug, Clone, Copy)]
pub enum ModelDescriptor<'a> {
    Esn(&'a EsnConfig),
    Qrc(&'a QrcConfig),
    Lstm { hidden: usize, d_in: usize },
    Qlstm { hidden: usize, d_in: usize, qubits: usize, qlayers: usize, proj_bias: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    /// Fixed resources that cost compute without being trained.
    pub descriptor: String,
}

pub fn count_params(model: ModelDescriptor<'_>) -> ParamCount {
    match model {
        ModelDescriptor::Esn(c) => ParamCount {
            trainable: c.readout_params(),
            descriptor: format!("N={}, ρ={}", c.n_nodes, c.spectral_radius),
        },
        ModelDescriptor::Qrc(c) => ParamCount {
            trainable: c.readout_params(),
            descriptor: format!("{} qubits, {} shots", c.n_qubits, c.n_shots),
        },
        ModelDescriptor::Lstm { hidden, d_in } => ParamCount {
            trainable: recurrent::count_lstm_params(hidden, d_in),
            descriptor: "—".into(),
        },
        ModelDescriptor::Qlstm { hidden, d_in, qubits, qlayers, proj_bias } => ParamCount {
            trainable: qlstm::count_qlstm_params(hidden, d_in, qubits, qlayers, proj_bias),
            descriptor: format!("{qubits} qubits, {qlayers} layer(s)"),
        },
    }
}

/// Runs `action` and returns its result with the elapsed monotonic seconds.
pub fn time_block<R>(action: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = action();
    (out, start.elapsed().as_secs_f64())
}

/// One model's metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub model: String,
    pub repeat: usize,
    pub seed: u64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub rmse: f64,
    pub nrmse: f64,
    pub train_time_s: f64,
    pub trainable_params: usize,
    pub reservoir_descriptor: String,
    pub memory_capacity: Option<f64>,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn failed(model: &str, repeat: usize, seed: u64, reason: &str) -> Self {
        BenchRecord {
            model: model.into(),
            repeat,
            seed,
            status: format!("failed: {reason}"),
            rmse: f64::NAN,
            nrmse: f64::NAN,
            train_time_s: f64::NAN,
            trainable_params: 0,
            reservoir_descriptor: String::new(),
            memory_capacity: None,
        }
    }

    /// `[RMSE, NRMSE, train time, params]`, the inputs to the sustainability index.
    pub fn cost_vector(&self) -> [f64; 4] {
        [self.rmse, self.nrmse, self.train_time_s, self.trainable_params as f64]
    }
}

pub const SUSTAINABILITY_METRICS: [&str; 4] = ["rmse", "nrmse", "train_time_s", "trainable_params"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SustainabilityReport {
    pub metrics: Vec<String>,
    pub weights: [f64; 4],
    pub models: Vec<String>,
    /// Min–max normalised metric per model, in `metrics` order.
    pub normalized: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SustainabilityReport {
    pub fn score(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.scores[i])
    }

    /// Model names, best score first.
    pub fn ranking(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.models.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx.into_iter().map(|i| self.models[i].clone()).collect()
    }
}

/// `S = Σ_m w_m (1 − x'_m)` with `x' = (x − min)/(max − min)` per metric,
/// every metric being lower-is-better. Weights are renormalised to sum to 1.
pub fn sustainability_index(records: &[BenchRecord], weights: Option<[f64; 4]>) -> Result<SustainabilityReport> {
    if records.len() < 2 {
        return Err(invalid("sustainability index needs at least two models"));
    }
    let mut w = weights.unwrap_or([0.25; 4]);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(invalid("weights must be finite, non-negative and not all zero"));
    }
    w.iter_mut().for_each(|v| *v /= total);

    let costs: Vec<[f64; 4]> = records.iter().map(BenchRecord::cost_vector).collect();
    if costs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("all four metrics must be finite for every model"));
    }
    let mut normalized = vec![[0.0; 4]; records.len()];
    let mut warnings = Vec::new();
    for m in 0..4 {
        let lo = costs.iter().map(|c| c[m]).fold(f64::INFINITY, f64::min);
        let hi = costs.iter().map(|c| c[m]).fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            let msg = format!("{} is identical across models; it contributes uniformly", SUSTAINABILITY_METRICS[m]);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        for (row, c) in normalized.iter_mut().zip(&costs) {
            row[m] = (c[m] - lo) / (hi - lo);
        }
    }
    let scores = normalized
        .iter()
        .map(|x| (0..4).map(|m| w[m] * (1.0 - x[m])).sum())
        .collect();
    Ok(SustainabilityReport {
        metrics: SUSTAINABILITY_METRICS.iter().map(|s| s.to_string()).collect(),
        weights: w,
        models: records.iter().map(|r| r.model.clone()).collect(),
        normalized,
        scores,
        warnings,
    })
}

/// Published NARMA-10 figures, kept for side-by-side reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub rmse: f64,
    pub nrmse: f64,
    pub train_time_s: f64,
    pub trainable_params: usize,
    pub memory_capacity: Option<f64>,
}

pub const PUBLISHED_REFERENCE: [ReferenceRow; 4] = [
    ReferenceRow { model: "esn", rmse: 0.0177, nrmse: 0.185, train_time_s: 0.37, trainable_params: 18246, memory_capacity: Some(0.0128) },
    ReferenceRow { model: "lstm", rmse: 0.0562, nrmse: 0.530, train_time_s: 105.09, trainable_params: 17217, memory_capacity: None },
    ReferenceRow { model: "qlstm", rmse: 0.1078, nrmse: 1.050, train_time_s: 10276.6, trainable_params: 89, memory_capacity: None },
    ReferenceRow { model: "qrc", rmse: 0.0533, nrmse: 0.485, train_time_s: 743.46, trainable_params: 255, memory_capacity: Some(0.7752) },
];

pub fn reference_for(model: &str) -> Option<&'static ReferenceRow> {
    PUBLISHED_REFERENCE.iter().find(|r| r.model == model)
}

impl From<&ReferenceRow> for BenchRecord {
    fn from(r: &ReferenceRow) -> Self {
        BenchRecord {
            model: r.model.into(),
            repeat: 0,
            seed: 0,
            status: "ok".into(),
            rmse: r.rmse,
            nrmse: r.nrmse,
            train_time_s: r.train_time_s,
            trainable_params: r.trainable_params,
            reservoir_descriptor: String::new(),
            memory_capacity: r.memory_capacity,
        }
    }
}
