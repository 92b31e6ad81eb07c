//! Text ingestion: tokenization, vocabularies, fixed-length encoding,
//! embedding tables with PCA projection, and the synthetic long-range task.

mod corpus;
mod embedding;
mod pca;
mod synth;
mod vocab;

use thiserror::Error;

pub use corpus::{read_corpus, read_embeddings, CorpusLine};
pub use embedding::{xavier_uniform, EmbeddingTable};
pub use pca::{pca_project, PcaOptions, PcaResult};
pub use synth::{synth_task, SynthConfig, SynthSignal};
pub use vocab::{build_vocab, decode, encode, tokenize, Dataset, Example, Vocab, PAD, UNK};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    InvalidMinFreq,
    #[error("cannot encode an empty token sequence")]
    EmptyText,
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("requested {requested} components but the table has only {available} columns")]
    TooManyComponents { requested: usize, available: usize },
    #[error("PCA needs at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid synthetic task: {0}")]
    InvalidSynth(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T, E = TextError> = std::result::Result<T, E>;
