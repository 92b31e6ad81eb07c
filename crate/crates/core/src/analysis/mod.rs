//! FLOP accounting, wall-clock scaling, attention correlation, sampling
//! strategy ablations, K sweeps and score distributions.

mod bench;
mod flops;
mod stats;
mod studies;

use thiserror::Error;

pub use bench::{loglog_slope, measured_crossover, BenchConfig, BenchRow, CrossoverReport};
pub use flops::{attention_crossover, flops_model, Architecture, FlopParams, FlopReport, FLOP_CONSTANTS};
pub use stats::{
    correlate_pairs, pearson, pearson_attention, row_shuffled, score_histogram, Distribution, LogHistogram, Moments,
    PairCorrelation, ScoreHistogram, Summary,
};
pub use studies::{
    ablation_run, correlation_study, histogram_rows, k_sweep, sketch_score_histogram, AblationReport, AblationRow,
    AblationRun, CorrelationReport, CorrelationRow, HistogramRow, KSweepRow,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Model(#[from] crate::nn::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;
