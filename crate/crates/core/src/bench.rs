//! Benchmark orchestration: configuration, per-model dispatch, persistence
//! and report generation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, BenchError, Result};
use crate::esn::{build_reservoir, EsnConfig};
use crate::metrics::{
    count_params, memory_capacity, nrmse, reference_for, rmse, sustainability_index, time_block, BenchRecord,
    MemoryCapacitySpec, ModelDescriptor, SustainabilityReport, PUBLISHED_REFERENCE,
};
use crate::qlstm::{predict_qlstm, train_qlstm, QlstmConfig};
use crate::qrc::{QrcConfig, QrcTrace, QuantumReservoir};
use crate::readout::{apply_readout, fit_readout, ReservoirFeatures};
use crate::recurrent::{predict_lstm, train_lstm, LstmConfig};
use crate::seed::{derive_seed, rng_from_seed, Stream};
use crate::timeseries::{generate_narma10, split, Series, SplitSpec, INPUT_MAX};

pub const SEED_ENV: &str = "NARMABENCH_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Esn,
    Lstm,
    Qlstm,
    Qrc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Esn, ModelKind::Lstm, ModelKind::Qlstm, ModelKind::Qrc];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Esn => "esn",
            ModelKind::Lstm => "lstm",
            ModelKind::Qlstm => "qlstm",
            ModelKind::Qrc => "qrc",
        }
    }

    pub fn is_reservoir(self) -> bool {
        matches!(self, ModelKind::Esn | ModelKind::Qrc)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown model '{s}' (expected esn, lstm, qlstm or qrc)")))
    }
}

/// Full benchmark configuration. Omitted keys take the defaults below.
///
/// The `seed` fields inside the model blocks are only used by single-model
/// runs; `run_bench` seeds repeat `r` of every model with `seed + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub models: Vec<ModelKind>,
    pub series_length: usize,
    pub split: SplitSpec,
    pub ridge: f64,
    pub reservoir_repeats: usize,
    pub recurrent_repeats: usize,
    pub memory_capacity: bool,
    pub weights: [f64; 4],
    pub mc: MemoryCapacitySpec,
    pub esn: EsnConfig,
    pub qrc: QrcConfig,
    pub lstm: LstmConfig,
    pub qlstm: QlstmConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            output_dir: PathBuf::from("results"),
            models: ModelKind::ALL.to_vec(),
            series_length: 3000,
            split: SplitSpec::default(),
            ridge: 1e-8,
            reservoir_repeats: 3,
            recurrent_repeats: 1,
            memory_capacity: true,
            weights: [0.25; 4],
            mc: MemoryCapacitySpec::default(),
            esn: EsnConfig::default(),
            qrc: QrcConfig::default(),
            lstm: LstmConfig::default(),
            qlstm: QlstmConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(invalid("no models selected"));
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                return Err(invalid(format!("model '{m}' listed twice")));
            }
        }
        if self.reservoir_repeats == 0 || self.recurrent_repeats == 0 {
            return Err(invalid("repeat counts must be positive"));
        }
        if !(self.ridge >= 0.0) {
            return Err(invalid("ridge must be non-negative"));
        }
        self.split.validate(self.series_length)?;
        for m in &self.models {
            match m {
                ModelKind::Esn => self.esn.validate()?,
                ModelKind::Qrc => self.qrc.validate()?,
                ModelKind::Lstm => self.lstm.train.validate()?,
                ModelKind::Qlstm => self.qlstm.train.validate()?,
            }
        }
        Ok(())
    }

    pub fn repeats(&self, model: ModelKind) -> usize {
        if model.is_reservoir() {
            self.reservoir_repeats
        } else {
            self.recurrent_repeats
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Applies `NARMABENCH_SEED` when set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| BenchError::Config(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> Result<BenchConfig> {
    toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

/// Outcome of training and evaluating one model on one series.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub record: BenchRecord,
    /// Global indices of the evaluated steps.
    pub eval_range: Range<usize>,
    pub truth: Vec<f64>,
    pub predictions: Vec<f64>,
    pub loss_curve: Option<Vec<f64>>,
    pub qrc_trace: Option<QrcTrace>,
}

fn scored(
    model: ModelKind,
    seed: u64,
    repeat: usize,
    descriptor: ModelDescriptor<'_>,
    train_time_s: f64,
    eval_range: Range<usize>,
    truth: &[f64],
    predictions: Vec<f64>,
) -> Result<ModelRun> {
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(BenchError::Diverged(format!("{model} produced non-finite predictions")));
    }
    let count = count_params(descriptor);
    let record = BenchRecord {
        model: model.name().into(),
        repeat,
        seed,
        status: "ok".into(),
        rmse: rmse(&predictions, truth)?,
        nrmse: nrmse(&predictions, truth)?,
        train_time_s,
        trainable_params: count.trainable,
        reservoir_descriptor: count.descriptor,
        memory_capacity: None,
    };
    Ok(ModelRun { record, eval_range, truth: truth.to_vec(), predictions, loss_curve: None, qrc_trace: None })
}

/// Shifts the drive by one step so the features at row `t` have seen
/// `u_0..u_{t-1}`, the same information as the ESN state `x_t`.
fn lagged(u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len());
    out.push(0.0);
    out.extend_from_slice(&u[..u.len().saturating_sub(1)]);
    out
}

fn probe(seed: u64, length: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Probe));
    (0..length).map(|_| rng.random_range(0.0..=INPUT_MAX)).collect()
}

/// Trains and evaluates `model` on `series` with its block from `config`,
/// seeded with `seed`. Reservoir timings cover construction, the causal drive
/// over train and eval, and the readout fit.
pub fn run_model(model: ModelKind, config: &BenchConfig, series: &Series, seed: u64, repeat: usize) -> Result<ModelRun> {
    config.split.validate(series.len())?;
    let (train, eval) = split(series, &config.split)?;
    let n_train = config.split.n_train;
    let total = config.split.total();
    let u = &series.u[..total];
    let y = &series.y[..total];

    match model {
        ModelKind::Esn => {
            let esn_config = EsnConfig { seed, ..config.esn.clone() };
            let (fitted, secs) = time_block(|| -> Result<_> {
                let reservoir = build_reservoir(&esn_config)?;
                let features = reservoir.run(u)?;
                let readout = fit_readout(&features.window(0..n_train, esn_config.washout)?, &y[..n_train], config.ridge)?;
                Ok((reservoir, features, readout))
            });
            let (reservoir, features, readout) = fitted?;
            let pred = apply_readout(&readout, &features.window(n_train..total, 0)?)?;
            let mut run = scored(model, seed, repeat, ModelDescriptor::Esn(&esn_config), secs, eval.range(), eval.y, pred)?;
            if config.memory_capacity {
                let p = probe(seed, config.mc.probe_length);
                let mc = memory_capacity(|x| reservoir.run(x), &p, &config.mc)?;
                run.record.memory_capacity = Some(mc.total);
            }
            Ok(run)
        }
        ModelKind::Qrc => {
            let qrc_config = QrcConfig { seed, ..config.qrc.clone() };
            let (fitted, secs) = time_block(|| -> Result<_> {
                let reservoir = QuantumReservoir::new(qrc_config.clone())?;
                let trace = reservoir.run(&lagged(u))?;
                let features = trace.reservoir_features();
                let readout = fit_readout(&features.window(0..n_train, qrc_config.washout)?, &y[..n_train], config.ridge)?;
                Ok((reservoir, trace, features, readout))
            });
            let (reservoir, trace, features, readout) = fitted?;
            let pred = apply_readout(&readout, &features.window(n_train..total, 0)?)?;
            let mut run = scored(model, seed, repeat, ModelDescriptor::Qrc(&qrc_config), secs, eval.range(), eval.y, pred)?;
            if config.memory_capacity {
                let p = probe(seed, config.mc.probe_length);
                let runner = |x: &[f64]| -> Result<ReservoirFeatures> { Ok(reservoir.run(&lagged(x))?.reservoir_features()) };
                run.record.memory_capacity = Some(memory_capacity(runner, &p, &config.mc)?.total);
            }
            run.qrc_trace = Some(trace);
            Ok(run)
        }
        ModelKind::Lstm => {
            let mut lstm = config.lstm.clone();
            lstm.train.seed = seed;
            let outcome = train_lstm(&train, &lstm)?;
            let pred = predict_lstm(&outcome.params, u, lstm.feed_y)?[n_train..].to_vec();
            let descriptor = ModelDescriptor::Lstm { hidden: lstm.hidden, d_in: lstm.d_in() };
            let mut run = scored(model, seed, repeat, descriptor, outcome.train_time_s, eval.range(), eval.y, pred)?;
            run.loss_curve = Some(outcome.loss_curve);
            Ok(run)
        }
        ModelKind::Qlstm => {
            let mut qlstm = config.qlstm.clone();
            qlstm.train.seed = seed;
            let outcome = train_qlstm(&train, &qlstm)?;
            let pred = predict_qlstm(&outcome.params, u)?[n_train..].to_vec();
            let descriptor = ModelDescriptor::Qlstm {
                hidden: qlstm.hidden,
                d_in: 1,
                qubits: qlstm.qubits,
                qlayers: qlstm.qlayers,
                proj_bias: qlstm.proj_bias,
            };
            let mut run = scored(model, seed, repeat, descriptor, outcome.train_time_s, eval.range(), eval.y, pred)?;
            run.loss_curve = Some(outcome.loss_curve);
            Ok(run)
        }
    }
}

pub fn write_predictions(path: &Path, run: &ModelRun) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "t,truth,prediction")?;
    for ((t, y), p) in run.eval_range.clone().zip(&run.truth).zip(&run.predictions) {
        writeln!(out, "{t},{y:.16e},{p:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub created_unix_s: u64,
    pub series_seed: u64,
    pub models: Vec<ModelKind>,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub dir: PathBuf,
    pub raw: Vec<BenchRecord>,
    pub summary: ReportOutcome,
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub medians: Vec<BenchRecord>,
    pub sustainability: Option<SustainabilityReport>,
}

fn fresh_run_dir(root: &Path) -> Result<(PathBuf, u64)> {
    fs::create_dir_all(root)?;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    for k in 0..1000 {
        let name = if k == 0 { format!("run-{now}") } else { format!("run-{now}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((dir, now)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(invalid(format!("could not create a fresh run directory under {}", root.display())))
}

/// Runs every configured model and repeat into a new directory under
/// `config.output_dir`. A failing model becomes a failed row.
pub fn run_bench(config: &BenchConfig) -> Result<BenchOutcome> {
    config.validate()?;
    let (dir, created) = fresh_run_dir(&config.output_dir)?;
    fs::create_dir(dir.join("records"))?;
    fs::create_dir(dir.join("predictions"))?;
    fs::write(dir.join("config.toml"), config.to_toml()?)?;

    let series = generate_narma10(config.series_length, config.seed)?;
    series.write_csv(fs::File::create(dir.join("series.csv"))?)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config_hash: config.hash()?,
        created_unix_s: created,
        series_seed: series.seed,
        models: config.models.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let mut raw = Vec::new();
    for &model in &config.models {
        for repeat in 0..config.repeats(model) {
            let seed = config.seed.wrapping_add(repeat as u64);
            log::info!("running {model} repeat {repeat} (seed {seed})");
            let stem = format!("{model}-r{repeat}");
            let record = match run_model(model, config, &series, seed, repeat) {
                Ok(run) => {
                    write_predictions(&dir.join("predictions").join(format!("{stem}.csv")), &run)?;
                    run.record
                }
                Err(e) => {
                    log::error!("{model} repeat {repeat} failed: {e}");
                    BenchRecord::failed(model.name(), repeat, seed, &e.to_string())
                }
            };
            fs::write(dir.join("records").join(format!("{stem}.json")), serde_json::to_string_pretty(&record)?)?;
            raw.push(record);
        }
    }
    write_records(&dir.join("raw_results.csv"), &raw)?;
    let summary = write_reports(&dir, &raw, &config.weights)?;
    Ok(BenchOutcome { dir, raw, summary })
}

pub fn write_records(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

/// Regenerates `results.csv`, `sustainability.json` and `results.md` from the
/// raw rows in a run directory.
pub fn report(dir: &Path) -> Result<ReportOutcome> {
    let config_path = dir.join("config.toml");
    let weights = if config_path.exists() { load_config(&config_path)?.weights } else { BenchConfig::default().weights };
    let raw = read_records(&dir.join("raw_results.csv"))?;
    write_reports(dir, &raw, &weights)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-model medians over successful repeats, in first-seen model order.
/// In these rows `repeat` holds the number of repeats aggregated.
pub fn aggregate(raw: &[BenchRecord]) -> Vec<BenchRecord> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&BenchRecord>> = BTreeMap::new();
    for r in raw {
        if !order.contains(&r.model.as_str()) {
            order.push(&r.model);
        }
        groups.entry(&r.model).or_default().push(r);
    }
    order
        .into_iter()
        .map(|model| {
            let all = &groups[model];
            let ok: Vec<&&BenchRecord> = all.iter().filter(|r| r.is_ok()).collect();
            let Some(first) = ok.first() else {
                return BenchRecord::failed(model, 0, all[0].seed, "all repeats failed");
            };
            let col = |f: fn(&BenchRecord) -> f64| median(&mut ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let mc: Vec<f64> = ok.iter().filter_map(|r| r.memory_capacity).collect();
            BenchRecord {
                model: model.into(),
                repeat: ok.len(),
                seed: all[0].seed,
                status: "ok".into(),
                rmse: col(|r| r.rmse),
                nrmse: col(|r| r.nrmse),
                train_time_s: col(|r| r.train_time_s),
                trainable_params: first.trainable_params,
                reservoir_descriptor: first.reservoir_descriptor.clone(),
                memory_capacity: (!mc.is_empty()).then(|| median(&mut mc.clone())),
            }
        })
        .collect()
}

fn write_reports(dir: &Path, raw: &[BenchRecord], weights: &[f64; 4]) -> Result<ReportOutcome> {
    let medians = aggregate(raw);
    write_records(&dir.join("results.csv"), &medians)?;
    let ok: Vec<BenchRecord> = medians.iter().filter(|r| r.is_ok()).cloned().collect();
    let sustainability = if ok.len() >= 2 {
        let rep = sustainability_index(&ok, Some(*weights))?;
        fs::write(dir.join("sustainability.json"), serde_json::to_string_pretty(&rep)?)?;
        Some(rep)
    } else {
        log::warn!("fewer than two successful models; sustainability index skipped");
        None
    };
    fs::write(dir.join("results.md"), markdown(&medians, sustainability.as_ref(), weights)?)?;
    Ok(ReportOutcome { medians, sustainability })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("—".into(), |x| format!("{x:.digits$}"))
}

fn markdown(medians: &[BenchRecord], sus: Option<&SustainabilityReport>, weights: &[f64; 4]) -> Result<String> {
    let mut md = String::from("# NARMA-10 benchmark\n\n");
    md.push_str("Medians over repeats. Training time is wall-clock seconds for the training block.\n");
    md.push_str("Memory capacity is the sum over delays k = 1..k_max of the held-out squared correlation ");
    md.push_str("between u(t-k) and a ridge reconstruction from the reservoir features.\n\n");
    md.push_str("| Model | RMSE | NRMSE | Training time (s) | Trainable params | Fixed resources | Memory capacity | S |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in medians {
        if !r.is_ok() {
            md.push_str(&format!("| {} | {} | | | | | | |\n", r.model, r.status));
            continue;
        }
        let s = sus.and_then(|s| s.score(&r.model));
        md.push_str(&format!(
            "| {} | {:.4} | {:.3} | {:.2} | {} | {} | {} | {} |\n",
            r.model,
            r.rmse,
            r.nrmse,
            r.train_time_s,
            r.trainable_params,
            r.reservoir_descriptor,
            opt(r.memory_capacity, 4),
            opt(s, 3)
        ));
    }
    if let Some(s) = sus {
        md.push_str(&format!("\nRanking by S: {}\n", s.ranking().join(" > ")));
        for w in &s.warnings {
            md.push_str(&format!("\nNote: {w}\n"));
        }
    }

    let reference: Vec<BenchRecord> = PUBLISHED_REFERENCE.iter().map(BenchRecord::from).collect();
    let ref_sus = sustainability_index(&reference, Some(*weights))?;
    md.push_str("\n## Reference figures\n\n");
    md.push_str("| Model | RMSE | NRMSE | Training time (s) | Params | Memory capacity | S |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for r in &reference {
        md.push_str(&format!(
            "| {} | {:.4} | {:.3} | {:.2} | {} | {} | {:.3} |\n",
            r.model,
            r.rmse,
            r.nrmse,
            r.train_time_s,
            r.trainable_params,
            opt(r.memory_capacity, 4),
            ref_sus.score(&r.model).unwrap_or(f64::NAN)
        ));
    }
    md.push_str(&format!("\nRanking by S: {}\n", ref_sus.ranking().join(" > ")));
    let mismatched: Vec<String> = medians
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| reference_for(&r.model).map(|p| (r, p)))
        .filter(|(r, p)| r.trainable_params != p.trainable_params)
        .map(|(r, p)| format!("{} ({} here, {} reference)", r.model, r.trainable_params, p.trainable_params))
        .collect();
    if !mismatched.is_empty() {
        md.push_str(&format!(
            "\nParameter counts above follow from the configured architectures and differ from the reference counts for: {}.\n",
            mismatched.join(", ")
        ));
    }
    Ok(md)
}
