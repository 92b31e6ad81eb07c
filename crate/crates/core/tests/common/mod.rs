//! Shared helpers for the integration and acceptance tests: a five-point
//! finite-difference gradient checker, the per-op check catalog, small model
//! fixtures and sampler statistics.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smartbird::sampler::IndexMatrix;
use smartbird::sparse::{AttentionMode, EncoderConfig, EncoderModel};
use smartbird::tensor::{ParamStore, Tape, Tensor, Var};
use smartbird::textpipe::Example;

pub const EPS: f64 = 1e-4;

/// Normwise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        0.0
    } else {
        diff / denom
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates dropped because a probe crossed a ReLU kink.
    pub skipped: usize,
}

impl GradCheck {
    pub fn error(&self) -> f64 {
        rel_error(&self.analytic, &self.numeric)
    }
}

/// Probe offsets, in units of [`EPS`], of the five-point stencil.
const STENCIL: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// Fourth-order central difference from values at `x0 + STENCIL[i]·EPS`.
fn stencil_derivative(f: [f64; 4]) -> f64 {
    (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * EPS)
}

/// Compares the tape gradient of `f` at `inputs` with five-point central
/// differences. `f` maps leaf vars to a scalar. Coordinates whose probes
/// change the ReLU pattern are skipped.
pub fn check_leaves<F>(inputs: &[Tensor<f64>], f: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let run = |vals: &[Tensor<f64>], grad: bool| {
        let mut tape = if grad { Tape::new() } else { Tape::no_grad() };
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (mut tape, vars, out) = run(inputs, true);
    let base_sig = tape.relu_signature();
    tape.backward(out).expect("backward");
    let mut res = GradCheck::default();
    let mut vals = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = vals[i].data()[j];
            let mut fs = [0.0; 4];
            let mut kink = false;
            for (k, o) in STENCIL.iter().enumerate() {
                vals[i].data_mut()[j] = x0 + o * EPS;
                let (t, _, out) = run(&vals, false);
                kink |= t.relu_signature() != base_sig;
                fs[k] = t.value(out).data()[0];
            }
            vals[i].data_mut()[j] = x0;
            if kink {
                res.skipped += 1;
                continue;
            }
            res.analytic.push(g[j]);
            res.numeric.push(stencil_derivative(fs));
        }
    }
    res
}

/// Same check over every value of a parameter store. `f` builds the scalar
/// loss on a tape that reads from the store.
pub fn check_store<F>(store: &mut ParamStore<f64>, f: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store);
    let base_sig = tape.relu_signature();
    tape.backward(out).expect("backward");
    store.accumulate_grads(&tape);
    let ids: Vec<_> = store.ids().collect();
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            store
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).numel()])
        })
        .collect();
    store.zero_grad();
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::no_grad();
        let out = f(&mut tape, store);
        (tape.value(out).data()[0], tape.relu_signature())
    };
    let mut res = GradCheck::default();
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..store.value(id).numel() {
            let x0 = store.value(id).data()[j];
            let mut fs = [0.0; 4];
            let mut kink = false;
            for (m, o) in STENCIL.iter().enumerate() {
                store.value_mut(id).data_mut()[j] = x0 + o * EPS;
                let (fv, sig) = eval(store);
                kink |= sig != base_sig;
                fs[m] = fv;
            }
            store.value_mut(id).data_mut()[j] = x0;
            if kink {
                res.skipped += 1;
                continue;
            }
            res.analytic.push(grads[k][j]);
            res.numeric.push(stencil_derivative(fs));
        }
    }
    res
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Contracts `out` with a fixed random tensor so every output entry gets a
/// distinct upstream gradient.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(randn(&shape, &mut rng));
    let m = tape.mul(out, r).expect("same shape");
    tape.sum(m)
}

/// Name and worst error of every op check for one seed.
pub fn op_checks(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (m, k, n) = (d(1, 6), d(1, 6), d(1, 6));
    let (r, c) = (d(2, 6), d(2, 6));
    let kk = d(1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 << 32));
    let mut out = Vec::new();
    let s = seed;

    let a = randn(&[m, k], &mut rng);
    let b = randn(&[k, n], &mut rng);
    out.push((
        "matmul",
        check_leaves(&[a, b], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, s)
        }),
    ));
    let x = randn(&[r, c], &mut rng);
    out.push((
        "transpose",
        check_leaves(&[x.clone()], |t, v| {
            let y = t.transpose(v[0]).unwrap();
            project(t, y, s)
        }),
    ));
    let y = randn(&[r, c], &mut rng);
    let bias = randn(&[c], &mut rng);
    out.push((
        "add",
        check_leaves(&[x.clone(), y.clone()], |t, v| {
            let z = t.add(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "add_broadcast",
        check_leaves(&[x.clone(), bias.clone()], |t, v| {
            let z = t.add(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "sub",
        check_leaves(&[x.clone(), y.clone()], |t, v| {
            let z = t.sub(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "mul",
        check_leaves(&[x.clone(), y.clone()], |t, v| {
            let z = t.mul(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "scale",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.scale(v[0], -1.7);
            project(t, z, s)
        }),
    ));
    out.push((
        "relu",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.relu(v[0]);
            project(t, z, s)
        }),
    ));
    out.push((
        "tanh",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.tanh(v[0]);
            project(t, z, s)
        }),
    ));
    out.push((
        "softmax_rows",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.softmax_rows(v[0]);
            project(t, z, s)
        }),
    ));
    let keep: Vec<bool> = (0..r * c).map(|i| i % c == 0 || (i * 7 + s as usize) % 3 != 0).collect();
    out.push((
        "softmax_rows_masked",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.softmax_rows_masked(v[0], &keep).unwrap();
            project(t, z, s)
        }),
    ));
    let gain = randn(&[c], &mut rng);
    out.push((
        "layer_norm",
        check_leaves(&[x.clone(), gain, bias.clone()], |t, v| {
            let z = t.layer_norm(v[0], v[1], v[2]).unwrap();
            project(t, z, s)
        }),
    ));
    let labels: Vec<usize> = (0..r).map(|i| (i + s as usize) % c).collect();
    out.push((
        "cross_entropy",
        check_leaves(&[x.clone()], |t, v| t.cross_entropy(v[0], &labels).unwrap()),
    ));
    // Repeated indices make gradients accumulate into the same source row.
    let idx: Vec<usize> = (0..r * kk).map(|i| (i * 5 + s as usize) % r).collect();
    out.push((
        "gather_rows",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.gather_rows(v[0], &idx, &[r, kk]).unwrap();
            project(t, z, s)
        }),
    ));
    let g = randn(&[r, kk, c], &mut rng);
    out.push((
        "row_dot",
        check_leaves(&[x.clone(), g.clone()], |t, v| {
            let z = t.row_dot(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    let w = randn(&[r, kk], &mut rng);
    out.push((
        "row_weighted_sum",
        check_leaves(&[w, g], |t, v| {
            let z = t.row_weighted_sum(v[0], v[1]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "concat_cols",
        check_leaves(&[x.clone(), y.clone()], |t, v| {
            let z = t.concat_cols(&[v[0], v[1]]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "reshape",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.reshape(v[0], &[c, r]).unwrap();
            project(t, z, s)
        }),
    ));
    out.push((
        "sum",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.mul(v[0], v[0]).unwrap();
            t.sum(z)
        }),
    ));
    out.push((
        "mean",
        check_leaves(&[x.clone()], |t, v| {
            let z = t.mul(v[0], v[0]).unwrap();
            t.mean(z)
        }),
    ));
    out.push((
        "dropout",
        check_leaves(&[x.clone()], |t, v| {
            let mut drng = ChaCha8Rng::seed_from_u64(s);
            let z = t.dropout(v[0], 0.3, &mut drng).unwrap();
            project(t, z, s)
        }),
    ));
    let mut store = ParamStore::new();
    let table = store.add("table", randn(&[r, c], &mut rng));
    let rows: Vec<usize> = (0..kk + 2).map(|i| (i * 3 + s as usize) % r).collect();
    out.push((
        "param_rows",
        check_store(&mut store, |t, st| {
            let z = t.param_rows(st, table, &rows).unwrap();
            project(t, z, s)
        }),
    ));
    out
}

/// Small encoder config used by the sparse-model checks.
pub fn tiny_encoder(n: usize, dim: usize, heads: usize, layers: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        dim,
        heads,
        layers,
        n_classes: 3,
        max_len: n,
        positions: true,
        dropout: 0.0,
    }
}

pub fn random_example(n: usize, valid_len: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Example {
    let mut token_ids: Vec<u32> = (0..n).map(|_| rng.gen_range(2..vocab as u32)).collect();
    for t in token_ids.iter_mut().skip(valid_len) {
        *t = 0;
    }
    Example {
        token_ids,
        attn_len: valid_len,
        label: rng.gen_range(0..3),
    }
}

/// Random distinct keys per valid query; PAD query rows are inert.
pub fn random_indices(n: usize, valid_len: usize, k: usize, rng: &mut ChaCha8Rng) -> IndexMatrix {
    use rand::seq::index::sample;
    let width = k.min(valid_len);
    let mut idx = Vec::with_capacity(n * width);
    for q in 0..n {
        if q < valid_len {
            idx.extend(sample(rng, valid_len, width).into_iter().map(|i| i as u32));
        } else {
            idx.extend(std::iter::repeat(0).take(width));
        }
    }
    IndexMatrix::new(n, width, valid_len, idx)
}

/// Finite-difference check of a 1-layer sparse model with frozen indices.
pub fn sparse_model_check(seed: u64, n: usize, dim: usize, heads: usize, k: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = EncoderModel::random(tiny_encoder(n, dim, heads, 1), &mut rng).unwrap();
    let mut m64: EncoderModel<f64> = model.cast();
    let valid = rng.gen_range(k.max(2)..=n);
    let ex = random_example(n, valid, 12, &mut rng);
    let idx = vec![(0..heads).map(|_| random_indices(n, valid, k, &mut rng)).collect::<Vec<_>>()];
    let mut store = std::mem::take(&mut m64.store);
    check_store(&mut store, |t, st| {
        let m = EncoderModel {
            store: st.clone(),
            ..m64.clone()
        };
        m.loss(t, &ex, AttentionMode::Sparse(&idx), None).unwrap().0
    })
}

/// Mean of `s / p` over `draws` uniform draws on random ceilings.
pub fn uniform_ratio_mean(draws: usize, seed: u64) -> f64 {
    use smartbird::sampler::{draw_scores, ScoreMatrix};
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ScoreMatrix::new(n, n, (0..n * n).map(|_| rng.gen_range(0.1..10.0)).collect());
    let (mut sum, mut count) = (0.0, 0usize);
    while count < draws {
        let s = draw_scores(&p, &mut rng);
        for (a, b) in s.values().iter().zip(p.values()) {
            if count == draws {
                break;
            }
            sum += a / b;
            count += 1;
        }
    }
    sum / draws as f64
}

/// Per-key selection counts of query row `query` over `trials` independent
/// draws from `alpha`.
pub fn selection_counts(
    alpha: &smartbird::sketch::AttentionMatrix,
    strategy: smartbird::sampler::SamplingStrategy,
    k: usize,
    query: usize,
    trials: usize,
    seed: u64,
) -> Vec<usize> {
    use smartbird::sampler::{draw_scores, sampling_scores, topk_rows};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sampling_scores(alpha, strategy);
    let mut counts = vec![0usize; alpha.n()];
    for _ in 0..trials {
        let idx = topk_rows(&draw_scores(&p, &mut rng), k);
        for &j in idx.row(query) {
            counts[j as usize] += 1;
        }
    }
    counts
}

/// Largest |z|-score of any key's selection frequency against `K/N` when
/// every weight in a row is equal.
pub fn exchangeability_max_z(n: usize, k: usize, trials: usize, seed: u64) -> f64 {
    use smartbird::sampler::SamplingStrategy;
    use smartbird::sketch::AttentionMatrix;
    let counts = selection_counts(&AttentionMatrix::uniform(n, n), SamplingStrategy::SquaredInvLog, k, 0, trials, seed);
    let q = k as f64 / n as f64;
    let sigma = (trials as f64 * q * (1.0 - q)).sqrt();
    counts
        .iter()
        .map(|&c| ((c as f64 - trials as f64 * q) / sigma).abs())
        .fold(0.0, f64::max)
}

/// Inclusion frequencies for one row whose weights increase with the key
/// index, as `(alpha, frequency)` pairs sorted by weight.
pub fn inclusion_curve(n: usize, k: usize, trials: usize, seed: u64) -> Vec<(f64, f64)> {
    use smartbird::sampler::SamplingStrategy;
    use smartbird::sketch::AttentionMatrix;
    let raw: Vec<f64> = (0..n).map(|j| (0.25 * j as f64).exp()).collect();
    let z: f64 = raw.iter().sum();
    let mut w = vec![0.0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = (raw[j] / z) as f32;
        }
    }
    let a = AttentionMatrix::new(n, n, w);
    let counts = selection_counts(&a, SamplingStrategy::SquaredInvLog, k, 0, trials, seed);
    (0..n).map(|j| (raw[j] / z, counts[j] as f64 / trials as f64)).collect()
}

/// Checks that no adjacent pair on an inclusion curve is inverted at 95%
/// confidence, and that the extremes differ significantly. Returns the
/// first violation.
pub fn check_monotone(curve: &[(f64, f64)], trials: usize) -> Result<(), String> {
    let se = |a: f64, b: f64| ((a * (1.0 - a) + b * (1.0 - b)) / trials as f64).sqrt();
    for w in curve.windows(2) {
        let (lo, hi) = (w[0].1, w[1].1);
        if hi - lo < -1.96 * se(lo, hi) {
            return Err(format!("inversion at α {:.4}: {lo:.4} > {hi:.4}", w[1].0));
        }
    }
    let (first, last) = (curve[0].1, curve[curve.len() - 1].1);
    if last - first <= 1.96 * se(first, last) {
        return Err(format!("no significant increase: {first:.4} → {last:.4}"));
    }
    Ok(())
}

/// Worst disagreement between sparse attention with full index matrices and
/// dense attention on one random model and example.
pub struct SparseDenseGap {
    /// Largest element-wise difference of the final hidden states over valid
    /// query rows.
    pub forward: f64,
    /// Normwise relative difference of the loss gradients over all
    /// parameters.
    pub grad: f64,
}

pub fn sparse_dense_gap(seed: u64) -> SparseDenseGap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=32);
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let dim = heads * rng.gen_range(2..=6);
    let layers = rng.gen_range(1..=2);
    let model = EncoderModel::random(tiny_encoder(n, dim, heads, layers), &mut rng).unwrap();
    let valid = rng.gen_range(1..=n);
    let ex = random_example(n, valid, 12, &mut rng);
    let full: Vec<Vec<IndexMatrix>> = (0..layers).map(|_| vec![IndexMatrix::full(n, valid); heads]).collect();
    let run = |mode: AttentionMode<'_>| {
        let mut store = model.store.clone();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &ex.token_ids, valid, mode, None).unwrap();
        let hidden: Vec<f64> = tape.value(pass.hidden).data()[..valid * dim].iter().map(|&x| x as f64).collect();
        let loss = tape.cross_entropy(pass.head.logits, &[ex.label]).unwrap();
        tape.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate_grads(&tape);
        let grads: Vec<f64> = store
            .ids()
            .flat_map(|id| match store.grad(id) {
                Some(g) => g.iter().map(|&x| x as f64).collect::<Vec<_>>(),
                None => vec![0.0; store.value(id).numel()],
            })
            .collect();
        (hidden, grads)
    };
    let (hd, gd) = run(AttentionMode::Dense);
    let (hs, gs) = run(AttentionMode::Sparse(&full));
    SparseDenseGap {
        forward: hd.iter().zip(&hs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        grad: rel_error(&gd, &gs),
    }
}
