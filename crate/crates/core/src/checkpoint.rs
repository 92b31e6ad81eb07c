//! Model checkpoints: `b"SBCK"`, a little-endian `u32` header length, a JSON
//! header naming every tensor, then the tensors in the dump format of
//! [`crate::tensor::write_tensor`].

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ModelError;
use crate::sketch::SketchModel;
use crate::sparse::{EncoderModel, SmartBird};
use crate::tensor::{read_tensor, write_tensor, ParamStore, Tensor, TensorError};
use crate::trainer::{ModelConfig, ModelKind, Trained};

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint body does not match its header: {0}")]
    Layout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub vocab_fingerprint: u64,
    pub n_classes: usize,
    /// Sketch tensors (smart only) followed by encoder tensors, in body order.
    pub tensors: Vec<TensorEntry>,
}

fn entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        })
        .collect()
}

fn stores(model: &Trained) -> Vec<&ParamStore> {
    match model {
        Trained::Smart(m) => vec![&m.sketch.store, &m.encoder.store],
        Trained::Dense(m) => vec![&m.store],
    }
}

/// Serializes a trained model and the metadata needed to rebuild it.
pub fn write_checkpoint<W: Write>(
    w: &mut W,
    model: &Trained,
    cfg: &ModelConfig,
    vocab_fingerprint: u64,
) -> Result<()> {
    let (kind, encoder) = match model {
        Trained::Smart(m) => (ModelKind::Smart, &m.encoder),
        Trained::Dense(m) => (ModelKind::Dense, m),
    };
    let header = CheckpointHeader {
        version: VERSION,
        kind,
        config: cfg.clone(),
        vocab_size: encoder.cfg.vocab_size,
        vocab_fingerprint,
        n_classes: encoder.cfg.n_classes,
        tensors: stores(model).into_iter().flat_map(entries).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |source| CheckpointError::Io {
        path: "<writer>".into(),
        source,
    };
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for store in stores(model) {
        for p in store.iter() {
            write_tensor(w, &p.value)?;
        }
    }
    Ok(())
}

/// Reads only the header.
pub fn read_header<R: Read>(r: &mut R) -> Result<CheckpointHeader> {
    let io = |source| CheckpointError::Io {
        path: "<reader>".into(),
        source,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let mut json = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.version != VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    Ok(header)
}

fn fill(store: &mut ParamStore, tensors: &mut std::vec::IntoIter<(TensorEntry, Tensor<f32>)>) -> Result<()> {
    let mut values = Vec::with_capacity(store.len());
    for p in store.iter() {
        let (entry, t) = tensors
            .next()
            .ok_or_else(|| CheckpointError::Layout("fewer tensors than the model needs".into()))?;
        if entry.name != p.name || entry.shape != t.shape() {
            return Err(CheckpointError::Layout(format!(
                "expected {} {:?}, found {} {:?}",
                p.name,
                p.value.shape(),
                entry.name,
                t.shape()
            )));
        }
        values.push(t);
    }
    store.load_values(values)?;
    Ok(())
}

/// Rebuilds the model described by the header and loads its weights.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(CheckpointHeader, Trained)> {
    let header = read_header(r)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        tensors.push((e.clone(), read_tensor(r)?));
    }
    let mut it = tensors.into_iter();
    let cfg = &header.config;
    let (v, c) = (header.vocab_size, header.n_classes);
    // Shapes come from the config; the values are overwritten below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut encoder = EncoderModel::new(cfg.encoder_config(v, c), Tensor::zeros([v, cfg.dim]), &mut rng)?;
    let model = match header.kind {
        ModelKind::Smart => {
            let mut sketch = SketchModel::new(cfg.sketch_config(v, c), Tensor::zeros([v, cfg.tiny_dim]), &mut rng)?;
            fill(&mut sketch.store, &mut it)?;
            fill(&mut encoder.store, &mut it)?;
            Trained::Smart(SmartBird::new(sketch, encoder, cfg.sampling_config())?)
        }
        ModelKind::Dense => {
            fill(&mut encoder.store, &mut it)?;
            Trained::Dense(encoder)
        }
    };
    if it.next().is_some() {
        return Err(CheckpointError::Layout("more tensors than the model needs".into()));
    }
    Ok((header, model))
}

pub fn save(path: &Path, model: &Trained, cfg: &ModelConfig, vocab_fingerprint: u64) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, cfg, vocab_fingerprint)?;
    std::fs::write(path, buf).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Trained)> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{synth_task, SynthConfig};
    use crate::trainer::{evaluate, run_training};

    fn setup(kind: ModelKind) -> (Trained, ModelConfig, crate::textpipe::Dataset) {
        let (data, _) = synth_task(&SynthConfig {
            n_examples: 6,
            seq_len: 10,
            vocab_size: 16,
            pair_gap: 2,
            n_classes: 2,
            seed: 0,
        })
        .unwrap();
        let cfg = ModelConfig {
            dim: 8,
            heads: 2,
            k: 3,
            layers: 1,
            max_len: 10,
            batch_size: 3,
            epochs: 1,
            ..Default::default()
        };
        let table = crate::trainer::embedding_table(data.vocab.len(), &cfg).unwrap();
        let (m, _) = run_training(&data, None, &table, &cfg, kind).unwrap();
        (m, cfg, data)
    }

    #[test]
    fn roundtrip_preserves_predictions() {
        for kind in [ModelKind::Smart, ModelKind::Dense] {
            let (m, cfg, data) = setup(kind);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &m, &cfg, data.vocab.fingerprint()).unwrap();
            let (h, back) = read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(h.kind, kind);
            assert_eq!(h.vocab_fingerprint, data.vocab.fingerprint());
            let a = evaluate(m.classifier(), &data, 3, 1).unwrap();
            let b = evaluate(back.classifier(), &data, 3, 1).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let (m, cfg, data) = setup(ModelKind::Dense);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &cfg, data.vocab.fingerprint()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(CheckpointError::BadMagic)));
        buf.truncate(buf.len() - 4);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
