//! Synthetic classification task whose label depends on a long-range token
//! interaction.
//!
//! Every sequence is uniform noise with three planted tokens at least
//! `pair_gap` positions apart: a selector `s0` or `s1`, a first value token
//! `x{j}` and a second value token `y{k}` with `j != k`. The label is `j`
//! under `s0` and `k` under `s1`. The value tokens alone narrow the label to
//! two candidates, so a bag-of-words model tops out near 50%; the rest needs
//! the selector to be combined with the value it points at.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Result, TextError, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub seq_len: usize,
    /// Total vocabulary size including PAD and UNK.
    pub vocab_size: usize,
    /// Minimum distance between any two planted tokens.
    pub pair_gap: usize,
    pub n_classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_examples: 1000,
            seq_len: 64,
            vocab_size: 64,
            pair_gap: 8,
            n_classes: 4,
        }
    }
}

/// Where the planted tokens went and what they were.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSignal {
    pub selector_pos: usize,
    pub first_pos: usize,
    pub second_pos: usize,
    /// 0 picks the first value, 1 the second.
    pub selector: usize,
    pub first: usize,
    pub second: usize,
}

impl SynthSignal {
    /// Position of the value token the selector points at.
    pub fn target_pos(&self) -> usize {
        if self.selector == 0 {
            self.first_pos
        } else {
            self.second_pos
        }
    }
}

impl SynthConfig {
    /// Vocabulary in id order: PAD, UNK, `s0`, `s1`, `x*`, `y*`, noise `w*`.
    pub fn vocab(&self) -> Vocab {
        let c = self.n_classes;
        let noise = self.vocab_size.saturating_sub(self.noise_start());
        let names = ["s0".to_string(), "s1".to_string()]
            .into_iter()
            .chain((0..c).map(|i| format!("x{i}")))
            .chain((0..c).map(|i| format!("y{i}")))
            .chain((0..noise).map(|i| format!("w{i}")));
        Vocab::from_tokens(names, 1)
    }

    pub fn selector_id(&self, s: usize) -> u32 {
        (2 + s) as u32
    }

    pub fn first_id(&self, j: usize) -> u32 {
        (4 + j) as u32
    }

    pub fn second_id(&self, k: usize) -> u32 {
        (4 + self.n_classes + k) as u32
    }

    /// First noise token id.
    pub fn noise_start(&self) -> usize {
        4 + 2 * self.n_classes
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TextError::InvalidSynth(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes {} < 2", self.n_classes));
        }
        if self.vocab_size <= self.noise_start() {
            return bad(format!(
                "vocab_size {} leaves no noise tokens for {} classes",
                self.vocab_size, self.n_classes
            ));
        }
        if self.pair_gap == 0 || 2 * self.pair_gap >= self.seq_len {
            return bad(format!(
                "pair_gap {} must be in [1, seq_len/2) with seq_len={}",
                self.pair_gap, self.seq_len
            ));
        }
        Ok(())
    }
}

pub fn synth_task(cfg: &SynthConfig) -> Result<(Dataset, Vec<SynthSignal>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.seq_len;
    let c = cfg.n_classes;
    let noise_lo = cfg.noise_start() as u32;
    let noise_hi = cfg.vocab_size as u32;
    let far = |p: usize, taken: &[usize]| taken.iter().all(|&q| p.abs_diff(q) >= cfg.pair_gap);
    let mut examples = Vec::with_capacity(cfg.n_examples);
    let mut signals = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let mut ids: Vec<u32> = (0..n).map(|_| rng.gen_range(noise_lo..noise_hi)).collect();
        // Redraw all three together: placing them one at a time can leave no
        // room for the last.
        let pos = loop {
            let p = [rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n)];
            if far(p[1], &p[..1]) && far(p[2], &p[..2]) {
                break p;
            }
        };
        let selector = rng.gen_range(0..2);
        let first = rng.gen_range(0..c);
        let second = (first + rng.gen_range(1..c)) % c;
        let sig = SynthSignal {
            selector_pos: pos[0],
            first_pos: pos[1],
            second_pos: pos[2],
            selector,
            first,
            second,
        };
        ids[sig.selector_pos] = cfg.selector_id(selector);
        ids[sig.first_pos] = cfg.first_id(first);
        ids[sig.second_pos] = cfg.second_id(second);
        examples.push(Example {
            token_ids: ids,
            attn_len: n,
            label: if selector == 0 { first } else { second },
        });
        signals.push(sig);
    }
    Ok((
        Dataset {
            vocab: cfg.vocab(),
            n_classes: c,
            examples,
        },
        signals,
    ))
}
