//! Command-line interface. Exit codes: 0 success, 1 I/O or other runtime
//! failure, 2 usage or configuration error, 3 numeric failure, 4 artifact
//! mismatch.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use config::{load_data, load_datasets, DataSpec, LoadedData, RunConfig, StudySpec, SynthSpec};

use crate::analysis::{
    self, flops_model, histogram_rows, Architecture, FlopParams, AnalysisError, FLOP_CONSTANTS,
};
use crate::checkpoint::{self, CheckpointError};
use crate::report::{write_csv, ReportError};
use crate::sampler::derive_seed;
use crate::sparse::SmartBird;
use crate::textpipe::{Dataset, Example};
use crate::trainer::{evaluate, run_training, ModelKind, TrainError, Trained};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) | TrainError::EmptyDataset => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Train(t) => t.into(),
            AnalysisError::Config(_) | AnalysisError::Empty(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Config(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "smartbird", version, about = "Sketched-attention sparse Transformer: train, evaluate, benchmark, study")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config: ModelConfig keys plus `data`, `bench`, `study`, `out_dir`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; falls back to the SMARTBIRD_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record per-iteration wall-clock in metrics CSVs.
    #[arg(long)]
    pub timing: bool,
    /// Seed for evaluation-time index draws.
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Smart,
    Dense,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the sketch then the sparse model (or the dense baseline).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "smart")]
        model: ModelArg,
        /// Also write sampled index matrices for the first test examples.
        #[arg(long)]
        dump_indices: bool,
        #[arg(long, default_value_t = 4)]
        dump_examples: usize,
    },
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dump_indices: bool,
        #[arg(long, default_value_t = 4)]
        dump_examples: usize,
    },
    /// Wall-clock scaling benchmark and FLOP table.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Run one study: ablate, ksweep, correlate or histogram.
    Study {
        name: String,
        #[command(flatten)]
        common: Common,
        /// Smart checkpoint whose sketch feeds `histogram`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the sampled index matrices of a smart checkpoint as CSV.
    DumpIndices {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        examples: usize,
    },
}

/// One row of an index dump: the keys query `query` attends in one head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub example: usize,
    pub layer: usize,
    pub head: usize,
    pub query: usize,
    /// Space-separated key positions.
    pub indices: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: String,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = match common.seed {
        Some(s) => Some(s),
        None => match std::env::var("SMARTBIRD_SEED") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("SMARTBIRD_SEED={v:?} is not an integer")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(s) = seed {
        cfg.model = cfg.model.reseeded(s);
        let n = cfg.study.seeds.len() as u64;
        cfg.study.seeds = (s..s + n).collect();
        cfg.bench.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.model.threads = t;
    }
    if let Some(s) = common.eval_seed {
        cfg.model.eval_seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    Ok(cfg)
}

fn meta(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut m = json!({ "created_unix": created, "config": cfg.to_json() });
    if let (Some(m), serde_json::Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    m
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            common,
            model,
            dump_indices,
            dump_examples,
        } => cmd_train(&common, model, dump_indices.then_some(dump_examples)),
        Command::Eval {
            common,
            checkpoint,
            dump_indices,
            dump_examples,
        } => cmd_eval(&common, &checkpoint, dump_indices.then_some(dump_examples)),
        Command::Bench { common } => cmd_bench(&common),
        Command::Study {
            name,
            common,
            checkpoint,
        } => cmd_study(&name, &common, checkpoint.as_deref()),
        Command::DumpIndices {
            common,
            checkpoint,
            examples,
        } => {
            let cfg = resolve(&common)?;
            let (_, test) = load_datasets(&cfg)?;
            let (header, model) = checkpoint::load(&checkpoint)?;
            check_vocab(&header, &test)?;
            let Trained::Smart(m) = &model else {
                return Err(CliError::Mismatch("dense checkpoints have no index matrices".into()));
            };
            write_indices(&cfg, m, &test, examples)
        }
    }
}

fn cmd_train(common: &Common, model: ModelArg, dump: Option<usize>) -> Result<()> {
    let cfg = resolve(common)?;
    let data = load_data(&cfg)?;
    let kind = match model {
        ModelArg::Smart => ModelKind::Smart,
        ModelArg::Dense => ModelKind::Dense,
    };
    let (trained, metrics) = run_training(&data.train, Some(&data.test), &data.table, &cfg.model, kind)?;
    let out = &cfg.out_dir;
    let m = meta(
        &cfg,
        json!({
            "command": "train",
            "model": kind,
            "ms_per_iter": if common.timing { json!(metrics.ms_per_iter) } else { json!(null) },
        }),
    );
    write_csv(&out.join("metrics.csv"), &m, &metrics.csv_rows(common.timing))?;
    checkpoint::save(&out.join("model.sbck"), &trained, &cfg.model, data.train.vocab.fingerprint())?;
    data.train
        .vocab
        .write(&out.join("vocab.txt"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(test) = metrics.rows.iter().find(|r| r.phase == "test") {
        println!("test accuracy {:.4} macro-F {:.4}", test.accuracy, test.macro_f);
    }
    if let (Some(n), Trained::Smart(m)) = (dump, &trained) {
        write_indices(&cfg, m, &data.test, n)?;
    }
    Ok(())
}

fn check_vocab(header: &checkpoint::CheckpointHeader, data: &Dataset) -> Result<()> {
    if header.vocab_fingerprint != data.vocab.fingerprint() || header.vocab_size != data.vocab.len() {
        return Err(CliError::Mismatch(format!(
            "checkpoint vocabulary ({} tokens) differs from the data vocabulary ({} tokens)",
            header.vocab_size,
            data.vocab.len()
        )));
    }
    if header.n_classes != data.n_classes {
        return Err(CliError::Mismatch(format!(
            "checkpoint has {} classes, data {}",
            header.n_classes, data.n_classes
        )));
    }
    Ok(())
}

fn cmd_eval(common: &Common, path: &Path, dump: Option<usize>) -> Result<()> {
    let cfg = resolve(common)?;
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint not found: {}", path.display())));
    }
    let (_, test) = load_datasets(&cfg)?;
    let (header, model) = checkpoint::load(path)?;
    check_vocab(&header, &test)?;
    let m = evaluate(model.classifier(), &test, cfg.model.eval_seed, cfg.model.threads)?;
    println!("accuracy {:.4} macro-F {:.4} over {} examples", m.accuracy, m.macro_f, m.n);
    let row = EvalRow {
        split: "test".into(),
        n: m.n,
        accuracy: m.accuracy,
        macro_f: m.macro_f,
    };
    let meta = meta(
        &cfg,
        json!({ "command": "eval", "checkpoint": path.display().to_string(), "model": header.kind }),
    );
    write_csv(&cfg.out_dir.join("eval.csv"), &meta, &[row])?;
    if let (Some(n), Trained::Smart(m)) = (dump, &model) {
        write_indices(&cfg, m, &test, n)?;
    }
    Ok(())
}

/// Index matrices drawn exactly as evaluation draws them.
pub fn index_rows(model: &SmartBird, examples: &[Example], eval_seed: u64) -> Result<Vec<IndexRow>> {
    let mut rows = Vec::new();
    for (e, ex) in examples.iter().enumerate() {
        let idx = model
            .indices(ex, derive_seed(&[eval_seed, e as u64]))
            .map_err(|err| CliError::Runtime(err.to_string()))?;
        for (l, heads) in idx.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                for q in 0..m.n() {
                    rows.push(IndexRow {
                        example: e,
                        layer: l,
                        head: h,
                        query: q,
                        indices: m.row(q).iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn write_indices(cfg: &RunConfig, model: &SmartBird, test: &Dataset, n: usize) -> Result<()> {
    let examples = &test.examples[..n.min(test.len())];
    let rows = index_rows(model, examples, cfg.model.eval_seed)?;
    let m = meta(cfg, json!({ "command": "dump-indices", "examples": examples.len() }));
    write_csv(&cfg.out_dir.join("indices.csv"), &m, &rows)?;
    Ok(())
}

fn cmd_bench(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let report = analysis::measured_crossover(&cfg.bench)?;
    let m = meta(
        &cfg,
        json!({
            "command": "bench",
            "grid": cfg.bench.grid,
            "dense_slope": report.dense_slope,
            "sparse_slope": report.sparse_slope,
            "smart_slope": report.smart_slope,
            "crossover_n": report.crossover_n,
        }),
    );
    write_csv(&cfg.out_dir.join("bench.csv"), &m, &report.rows)?;
    let flops: Vec<_> = cfg
        .bench
        .grid
        .iter()
        .flat_map(|&n| {
            let p = FlopParams::from_config(&cfg.model, n);
            [flops_model(&p, Architecture::Smart), flops_model(&p, Architecture::Dense)]
        })
        .collect();
    let fm = meta(&cfg, json!({ "command": "bench", "constants": FLOP_CONSTANTS }));
    write_csv(&cfg.out_dir.join("flops.csv"), &fm, &flops)?;
    println!(
        "grid {:?}: dense slope {:.3}, sparse slope {:.3}, crossover {:?}",
        cfg.bench.grid, report.dense_slope, report.sparse_slope, report.crossover_n
    );
    Ok(())
}

fn cmd_study(name: &str, common: &Common, ckpt: Option<&Path>) -> Result<()> {
    const STUDIES: [&str; 4] = ["ablate", "ksweep", "correlate", "histogram"];
    if !STUDIES.contains(&name) {
        return Err(CliError::Config(format!("unknown study {name:?}; expected one of {STUDIES:?}")));
    }
    let cfg = resolve(common)?;
    let (train, test) = load_datasets(&cfg)?;
    let s = &cfg.study;
    let out = &cfg.out_dir;
    let m = |extra: serde_json::Value| meta(&cfg, json!({ "command": "study", "study": name, "result": extra }));
    match name {
        "ablate" => {
            let r = analysis::ablation_run(&train, &test, &cfg.model, &s.strategies, &s.seeds)?;
            write_csv(&out.join("ablate.csv"), &m(json!(null)), &r.rows)?;
            write_csv(&out.join("ablate_runs.csv"), &m(json!(null)), &r.runs)?;
            for row in &r.rows {
                println!(
                    "{:<16} accuracy {:.4} ± {:.4}",
                    row.strategy.name(),
                    row.mean_accuracy,
                    row.std_accuracy
                );
            }
        }
        "ksweep" => {
            let rows = analysis::k_sweep(&train, &test, &cfg.model, &s.k_values, &s.seeds)?;
            write_csv(&out.join("ksweep.csv"), &m(json!({ "constants": FLOP_CONSTANTS })), &rows)?;
            for r in &rows {
                println!("K={:<4} accuracy {:.4} smart MACs {}", r.k, r.mean_accuracy, r.smart_flops);
            }
        }
        "correlate" => {
            let r = analysis::correlation_study(&train, &test, &cfg.model, &s.seeds, s.max_examples)?;
            let extra = json!({
                "sketch_accuracy": r.sketch_accuracy,
                "dense_accuracy": r.dense_accuracy,
                "examples": r.examples,
            });
            write_csv(&out.join("correlate.csv"), &m(extra), &r.rows())?;
            println!(
                "sketch vs dense r {:.4} (shuffled {:.4})",
                r.sketch_vs_dense.summary.mean, r.sketch_vs_dense.shuffled.mean
            );
        }
        _ => {
            let sketch = match ckpt {
                Some(p) => {
                    let (header, model) = checkpoint::load(p)?;
                    check_vocab(&header, &test)?;
                    match model {
                        Trained::Smart(m) => m.sketch,
                        Trained::Dense(_) => {
                            return Err(CliError::Mismatch("histogram needs a smart checkpoint".into()))
                        }
                    }
                }
                None => {
                    let seed = s.seeds.first().copied().unwrap_or(cfg.model.init_seed);
                    let mc = cfg.model.reseeded(seed);
                    let table = crate::trainer::embedding_table(train.vocab.len(), &mc)?;
                    crate::trainer::train_sketch(&train, &table, &mc)?.0
                }
            };
            let h = analysis::sketch_score_histogram(&sketch, &test, s.max_examples, s.bins)?;
            let extra = json!({
                "alpha": h.alpha.moments,
                "inv_log": h.inv_log.moments,
                "squared_inv_log": h.squared_inv_log.moments,
                "nonpositive": h.alpha.histogram.nonpositive,
            });
            write_csv(&out.join("histogram.csv"), &m(extra), &histogram_rows(&h))?;
            println!(
                "alpha median {:.3e} mean {:.3e}; CV inv_log {:.3} squared_inv_log {:.3}",
                h.alpha.moments.median, h.alpha.moments.mean, h.inv_log.moments.cv, h.squared_inv_log.moments.cv
            );
        }
    }
    Ok(())
}
