use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use narmabench::bench::{self, BenchConfig, ModelKind};
use narmabench::metrics::BenchRecord;
use narmabench::qrc::MeasurementMode;
use narmabench::timeseries::generate_narma10;

#[derive(Parser)]
#[command(name = "narmabench", version, about = "NARMA-10 benchmark for classical and quantum sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded NARMA-10 series as CSV (t,u,y).
    Generate {
        #[arg(long, default_value_t = 3000)]
        length: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a single model.
    Run(RunArgs),
    /// Run the full benchmark described by a config file.
    Bench {
        /// TOML config; every omitted key takes its default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Regenerate results.csv, sustainability.json and results.md for a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    /// Base config whose model block is then overridden by the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Skip the memory-capacity probe for reservoir models.
    #[arg(long)]
    no_mc: bool,

    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    input_sparsity: Option<f64>,
    #[arg(long)]
    input_scale: Option<f64>,
    #[arg(long)]
    washout: Option<usize>,

    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    a_in: Option<f64>,
    #[arg(long)]
    a_fb: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    /// Use exact expectations instead of sampled shots.
    #[arg(long)]
    exact: bool,

    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Truncated-BPTT window; 0 unrolls the whole training window.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    feed_y: bool,
    #[arg(long)]
    no_forget_bias: bool,
    #[arg(long)]
    qlayers: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,

    /// Directory for record.json, predictions.csv and loss/trace files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the QRC feature trace (t,z0,...) to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: narmabench::BenchError| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    fn config(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => bench::load_config(p)?,
            None => BenchConfig::default(),
        }
        .with_env_overrides()?;
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.series_length, self.length);
        set(&mut cfg.split.n_train, self.n_train);
        set(&mut cfg.split.n_eval, self.n_eval);
        set(&mut cfg.ridge, self.ridge);
        if self.no_mc {
            cfg.memory_capacity = false;
        }

        let esn = &mut cfg.esn;
        set(&mut esn.n_nodes, self.nodes);
        set(&mut esn.spectral_radius, self.rho);
        set(&mut esn.internal_sparsity, self.sparsity);
        set(&mut esn.input_sparsity, self.input_sparsity);
        set(&mut esn.input_scale, self.input_scale);
        set(&mut esn.washout, self.washout);

        let qrc = &mut cfg.qrc;
        set(&mut qrc.n_qubits, self.qubits);
        set(&mut qrc.a_in, self.a_in);
        set(&mut qrc.a_fb, self.a_fb);
        set(&mut qrc.n_shots, self.shots);
        set(&mut qrc.washout, self.washout);
        if self.exact {
            qrc.mode = MeasurementMode::Exact;
        }

        let lstm = &mut cfg.lstm;
        set(&mut lstm.hidden, self.hidden);
        lstm.feed_y |= self.feed_y;
        if self.no_forget_bias {
            lstm.forget_bias = false;
        }
        let qlstm = &mut cfg.qlstm;
        set(&mut qlstm.hidden, self.hidden);
        set(&mut qlstm.qubits, self.qubits);
        set(&mut qlstm.qlayers, self.qlayers);
        if self.max_steps.is_some() {
            qlstm.max_steps = self.max_steps;
        }
        for train in [&mut cfg.lstm.train, &mut cfg.qlstm.train] {
            set(&mut train.epochs, self.epochs);
            set(&mut train.learning_rate, self.lr);
            set(&mut train.batch_size, self.batch);
            if let Some(w) = self.window {
                train.window = (w > 0).then_some(w);
                if w == 0 {
                    train.stride = None;
                }
            }
            if self.stride.is_some() {
                train.stride = self.stride;
            }
        }
        cfg.models = vec![self.model];
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_single(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    if args.trace.is_some() && args.model != ModelKind::Qrc {
        bail!("--trace is only available for --model qrc");
    }
    let series = generate_narma10(cfg.series_length, cfg.seed)?;
    let run = bench::run_model(args.model, &cfg, &series, cfg.seed, 0)?;
    if let (Some(path), Some(trace)) = (&args.trace, &run.qrc_trace) {
        trace.write_csv(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("record.json"), serde_json::to_string_pretty(&run.record)?)?;
        bench::write_predictions(&dir.join("predictions.csv"), &run)?;
        if let Some(curve) = &run.loss_curve {
            let mut text = String::from("epoch,loss\n");
            for (e, l) in curve.iter().enumerate() {
                text.push_str(&format!("{e},{l:.16e}\n"));
            }
            fs::write(dir.join("loss_curve.csv"), text)?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&run.record)?);
    Ok(())
}

fn print_summary(rows: &[BenchRecord]) {
    println!("{:<6} {:>10} {:>8} {:>12} {:>8}  status", "model", "rmse", "nrmse", "train_s", "params");
    for r in rows {
        println!(
            "{:<6} {:>10.5} {:>8.4} {:>12.2} {:>8}  {}",
            r.model, r.rmse, r.nrmse, r.train_time_s, r.trainable_params, r.status
        );
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { length, seed, out } => {
            let seed = match seed {
                Some(s) => s,
                None => BenchConfig::default().with_env_overrides()?.seed,
            };
            let series = generate_narma10(length, seed)?;
            match out {
                Some(path) => series.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?,
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    series.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
        }
        Command::Run(args) => run_single(&args)?,
        Command::Bench { config, out_dir } => {
            let mut cfg = match config {
                Some(p) => bench::load_config(&p)?,
                None => BenchConfig::default(),
            }
            .with_env_overrides()?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            let outcome = bench::run_bench(&cfg)?;
            print_summary(&outcome.summary.medians);
            if let Some(s) = &outcome.summary.sustainability {
                println!("ranking by S: {}", s.ranking().join(" > "));
            }
            println!("results written to {}", outcome.dir.display());
        }
        Command::Report { input } => {
            let out = bench::report(&input)?;
            print_summary(&out.medians);
            println!("reports regenerated in {}", input.display());
        }
    }
    Ok(())
}
