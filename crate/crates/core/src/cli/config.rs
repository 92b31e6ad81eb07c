//! Run configuration: a flat JSON object of [`ModelConfig`] keys plus the
//! reserved sections `data`, `bench`, `study` and `out_dir`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::analysis::BenchConfig;
use crate::sampler::{derive_seed, SamplingStrategy};
use crate::textpipe::{
    build_vocab, encode, read_corpus, read_embeddings, synth_task, CorpusLine, Dataset, EmbeddingTable, SynthConfig, Vocab,
};
use crate::trainer::{embedding_table, ModelConfig};

const RESERVED: [&str; 4] = ["data", "bench", "study", "out_dir"];

/// Synthetic train/test split. The test set uses a seed derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub pair_gap: usize,
    pub n_classes: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_train: 2000,
            n_test: 500,
            seq_len: 32,
            vocab_size: 32,
            pair_gap: 4,
            n_classes: 4,
        }
    }
}

impl SynthSpec {
    fn split(&self, n_examples: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_examples,
            seq_len: self.seq_len,
            vocab_size: self.vocab_size,
            pair_gap: self.pair_gap,
            n_classes: self.n_classes,
        }
    }
}

/// Either `synthetic` or a pair of corpus files. Relative paths resolve
/// against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub synthetic: Option<SynthSpec>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Fixed vocabulary; otherwise built from the training corpus.
    pub vocab_path: Option<PathBuf>,
    /// `<token> <f1> ... <fD>` vectors imported into the embedding table.
    pub embeddings_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub seeds: Vec<u64>,
    pub strategies: Vec<SamplingStrategy>,
    pub k_values: Vec<usize>,
    /// Test examples used by `correlate` and `histogram`.
    pub max_examples: usize,
    pub bins: usize,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            seeds: (0..5).collect(),
            strategies: SamplingStrategy::ALL.to_vec(),
            k_values: vec![1, 2, 4, 8, 16, 20, 32],
            max_examples: 100,
            bins: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    /// Serialized flat, in the same layout as config files.
    #[serde(flatten)]
    pub model: ModelConfig,
    pub data: DataSpec,
    pub bench: BenchConfig,
    pub study: StudySpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: DataSpec {
                synthetic: Some(SynthSpec::default()),
                ..Default::default()
            },
            bench: BenchConfig::default(),
            study: StudySpec::default(),
            out_dir: PathBuf::from("smartbird-out"),
        }
    }
}

fn section<T: for<'de> Deserialize<'de> + Default>(
    obj: &mut serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<T, CliError> {
    match obj.remove(key) {
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::Config(format!("`{key}`: {e}"))),
        None => Ok(T::default()),
    }
}

impl RunConfig {
    /// Parses config text. `base` resolves relative data paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let serde_json::Value::Object(mut obj) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let has_data = obj.contains_key("data");
        let mut data: DataSpec = section(&mut obj, "data")?;
        if !has_data {
            data.synthetic = Some(SynthSpec::default());
        }
        let bench = section(&mut obj, "bench")?;
        let study = section(&mut obj, "study")?;
        let out_dir = match obj.remove("out_dir") {
            Some(serde_json::Value::String(s)) => base.join(s),
            Some(_) => return Err(CliError::Config("`out_dir` must be a string".into())),
            None => PathBuf::from("smartbird-out"),
        };
        debug_assert!(RESERVED.iter().all(|k| !obj.contains_key(*k)));
        let model: ModelConfig = serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| CliError::Config(e.to_string()))?;
        for p in [&mut data.train_path, &mut data.test_path, &mut data.vocab_path, &mut data.embeddings_path]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
        let cfg = RunConfig {
            model,
            data,
            bench,
            study,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Checks the model config and that every referenced file exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let d = &self.data;
        match (&d.synthetic, &d.train_path) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("`data` needs either `synthetic` or `train_path`, not both".into()))
            }
            (None, None) => return Err(CliError::Config("`data` needs `synthetic` or `train_path`".into())),
            (None, Some(_)) if d.test_path.is_none() => {
                return Err(CliError::Config("`data.test_path` is required with `train_path`".into()))
            }
            _ => {}
        }
        for p in [&d.train_path, &d.test_path, &d.vocab_path, &d.embeddings_path].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Config echo for output metadata.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Train and test sets over one vocabulary, plus the embedding table.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub table: EmbeddingTable,
}

fn encode_lines(lines: &[CorpusLine], vocab: &Vocab, max_len: usize, n_classes: usize) -> Result<Dataset, CliError> {
    let examples = lines
        .iter()
        .map(|l| encode(&l.tokens, vocab, max_len, l.label))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Dataset {
        vocab: vocab.clone(),
        n_classes,
        examples,
    })
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Builds the datasets only (no embedding table).
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let m = &cfg.model;
    if let Some(s) = &cfg.data.synthetic {
        if s.seq_len > m.max_len {
            return Err(CliError::Config(format!(
                "synthetic seq_len {} exceeds max_len {}",
                s.seq_len, m.max_len
            )));
        }
        let (train, _) = synth_task(&s.split(s.n_train, s.seed)).map_err(config_err)?;
        let (test, _) = synth_task(&s.split(s.n_test, derive_seed(&[s.seed, 0x7E57]))).map_err(config_err)?;
        return Ok((train, test));
    }
    let train_path = cfg.data.train_path.as_ref().expect("validated");
    let test_path = cfg.data.test_path.as_ref().expect("validated");
    let train_lines = read_corpus(train_path).map_err(config_err)?;
    let test_lines = read_corpus(test_path).map_err(config_err)?;
    let vocab = match &cfg.data.vocab_path {
        Some(p) => Vocab::read(p).map_err(config_err)?,
        None => build_vocab(train_lines.iter().flat_map(|l| l.tokens.iter()), m.min_freq).map_err(config_err)?,
    };
    let n_classes = train_lines.iter().chain(&test_lines).map(|l| l.label + 1).max().unwrap_or(0).max(2);
    Ok((
        encode_lines(&train_lines, &vocab, m.max_len, n_classes)?,
        encode_lines(&test_lines, &vocab, m.max_len, n_classes)?,
    ))
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData, CliError> {
    let (train, test) = load_datasets(cfg)?;
    let m = &cfg.model;
    let table = match &cfg.data.embeddings_path {
        Some(p) => {
            let (dim, vectors) = read_embeddings(p).map_err(config_err)?;
            if dim != m.dim {
                return Err(CliError::Config(format!(
                    "{} has {dim}-dimensional vectors, model dim is {}",
                    p.display(),
                    m.dim
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[m.init_seed, 0xE4B]));
            EmbeddingTable::with_pretrained(&train.vocab, m.dim, m.tiny_dim, &vectors, &mut rng)
                .map_err(config_err)?
                .0
        }
        None => embedding_table(train.vocab.len(), m).map_err(config_err)?,
    };
    Ok(LoadedData { train, test, table })
}
