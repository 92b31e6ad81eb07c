use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TextError};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace and drops every non-alphanumeric
/// character. Tokens that end up empty are discarded.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
}

impl Vocab {
    /// Vocabulary from an ordered token list (PAD and UNK are prepended).
    pub fn from_tokens<I, S>(tokens: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            tokens: all,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens excluding PAD and UNK, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// FNV-1a over the ordered token list; identifies a vocabulary in
    /// checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// One token per line; line `k` holds id `k + 2`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Vocab::from_tokens(text.lines().map(str::to_string), 1))
    }
}

/// Keeps tokens seen at least `min_freq` times, ordered by descending
/// frequency then lexicographically.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_freq == 0 {
        return Err(TextError::InvalidMinFreq);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen = false;
    for tok in corpus {
        seen = true;
        let tok = tok.as_ref();
        if tok == PAD_TOKEN || tok == UNK_TOKEN {
            continue;
        }
        *counts.entry(tok.to_string()).or_default() += 1;
    }
    if !seen {
        return Err(TextError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t), min_freq))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    /// Length `max_len`, right-padded with [`PAD`].
    pub token_ids: Vec<u32>,
    /// Number of real (non-PAD) tokens; always at least one.
    pub attn_len: usize,
    pub label: usize,
}

impl Example {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn ids_usize(&self) -> Vec<usize> {
        self.token_ids.iter().map(|&t| t as usize).collect()
    }
}

/// Maps tokens to ids (unknown tokens become [`UNK`]), truncates to
/// `max_len` and right-pads with [`PAD`].
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize, label: usize) -> Result<Example> {
    if max_len == 0 {
        return Err(TextError::InvalidMaxLen);
    }
    if tokens.is_empty() {
        return Err(TextError::EmptyText);
    }
    let attn_len = tokens.len().min(max_len);
    let mut token_ids: Vec<u32> = tokens[..attn_len].iter().map(|t| vocab.id(t.as_ref())).collect();
    token_ids.resize(max_len, PAD);
    Ok(Example {
        token_ids,
        attn_len,
        label,
    })
}

/// Real tokens of an encoded example.
pub fn decode(example: &Example, vocab: &Vocab) -> Vec<String> {
    example.token_ids[..example.attn_len]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}

/// Encoded examples sharing one vocabulary and label space.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub n_classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.examples.first().map_or(0, Example::seq_len)
    }
}
