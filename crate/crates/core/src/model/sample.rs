//! Autoregressive sampling with per-layer key/value caches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Architecture;
use super::tensor::{self, c, Scalar};
use super::{is_terminal, Model};
use crate::seed::derive;
use crate::tokenizer::BOS;

/// A sampled token sequence (without BOS) and its log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// Ended with EOS rather than hitting the length limit.
    pub finished: bool,
}

struct LayerCache<T> {
    /// `n × max_len × inner`.
    k: Vec<T>,
    v: Vec<T>,
    /// Cross-attention keys and values over the memory, `n_mem × inner`.
    mem_k: Vec<T>,
    mem_v: Vec<T>,
}

/// Attention of one query row over `len` key/value rows (stride `inner`).
fn attend<T: Scalar>(q: &[T], k: &[T], v: &[T], len: usize, heads: usize, dh: usize, out: &mut [T], scores: &mut Vec<T>) {
    let inner = heads * dh;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    scores.resize(len, T::zero());
    for h in 0..heads {
        T::gemm_raw(1, dh, len, scale, &q[h * dh..], (inner, 1), &k[h * dh..], (1, inner), T::zero(), scores, (len, 1));
        tensor::softmax_rows(scores, len);
        T::gemm_raw(1, len, dh, T::one(), scores, (len, 1), &v[h * dh..], (inner, 1), T::zero(), &mut out[h * dh..], (inner, 1));
    }
}

fn choose(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> (u32, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    if temperature <= 1e-12 {
        let (i, _) = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
        return (i as u32, logits[i] - lse);
    }
    let scaled: Vec<f64> = logits.iter().map(|l| (l - max) / temperature).collect();
    let total: f64 = scaled.iter().map(|s| s.exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = scaled.len() - 1;
    for (i, s) in scaled.iter().enumerate() {
        u -= s.exp();
        if u < 0.0 {
            pick = i;
            break;
        }
    }
    (pick as u32, logits[pick] - lse)
}

/// Draws `n` candidates for one memory block (`n_mem × dim`).
///
/// Candidate `i` uses its own stream derived from `(seed, i)`, so the first
/// `m` candidates do not depend on `n`.
pub fn sample_candidates<T: Scalar>(
    model: &Model<T>,
    memory: &[T],
    n_mem: usize,
    n: usize,
    temperature: f64,
    seed: u64,
    max_len: usize,
) -> Vec<Candidate> {
    let arch: &Architecture = &model.arch;
    let p = &model.params;
    let cfg = &arch.config;
    let d = cfg.dim;
    let inner = cfg.heads * cfg.head_dim;
    let max_len = max_len.min(cfg.max_output_len);
    let steps = max_len.saturating_sub(1);
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| ChaCha8Rng::seed_from_u64(derive(&[seed, i]))).collect();
    let mut caches: Vec<LayerCache<T>> = arch
        .decoder
        .iter()
        .map(|l| LayerCache {
            k: vec![T::zero(); n * max_len * inner],
            v: vec![T::zero(); n * max_len * inner],
            mem_k: l.cross.k.forward(p, memory, n_mem),
            mem_v: l.cross.v.forward(p, memory, n_mem),
        })
        .collect();
    let mut out: Vec<Candidate> = (0..n).map(|_| Candidate { tokens: Vec::new(), log_prob: 0.0, finished: false }).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut last = vec![BOS; n];
    let mut scores = Vec::new();
    for t in 0..steps {
        if active.is_empty() {
            break;
        }
        let a = active.len();
        let tokens: Vec<u32> = active.iter().map(|&i| last[i]).collect();
        let mut x = vec![T::zero(); a * d];
        for (row, &tok) in x.chunks_mut(d).zip(&tokens) {
            let te = &p[arch.token_table.start + tok as usize * d..][..d];
            let pe = &p[arch.position_table.start + t * d..][..d];
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }
        for (layer, cache) in arch.decoder.iter().zip(caches.iter_mut()) {
            let (h, _) = layer.ln_self.forward(p, &x, cfg.ln_eps);
            let q = layer.self_attn.q.forward(p, &h, a);
            let k = layer.self_attn.k.forward(p, &h, a);
            let v = layer.self_attn.v.forward(p, &h, a);
            let mut ctx = vec![T::zero(); a * inner];
            for (r, &i) in active.iter().enumerate() {
                let base = i * max_len * inner;
                cache.k[base + t * inner..base + (t + 1) * inner].copy_from_slice(&k[r * inner..(r + 1) * inner]);
                cache.v[base + t * inner..base + (t + 1) * inner].copy_from_slice(&v[r * inner..(r + 1) * inner]);
                attend(
                    &q[r * inner..],
                    &cache.k[base..],
                    &cache.v[base..],
                    t + 1,
                    cfg.heads,
                    cfg.head_dim,
                    &mut ctx[r * inner..],
                    &mut scores,
                );
            }
            tensor::add_in_place(&mut x, &layer.self_attn.o.forward(p, &ctx, a));

            let (h, _) = layer.ln_cross.forward(p, &x, cfg.ln_eps);
            let q = layer.cross.q.forward(p, &h, a);
            for r in 0..a {
                attend(&q[r * inner..], &cache.mem_k, &cache.mem_v, n_mem, cfg.heads, cfg.head_dim, &mut ctx[r * inner..], &mut scores);
            }
            tensor::add_in_place(&mut x, &layer.cross.o.forward(p, &ctx, a));

            let (h, _) = layer.ln_mlp.forward(p, &x, cfg.ln_eps);
            tensor::add_in_place(&mut x, &layer.mlp.forward(p, &h, a).0);
        }
        let (h, _) = arch.decoder_norm.forward(p, &x, cfg.ln_eps);
        let logits = arch.head.forward(p, &h, a);
        let v = cfg.vocab_size;
        let mut still = Vec::with_capacity(a);
        for (r, &i) in active.iter().enumerate() {
            let row: Vec<f64> = logits[r * v..(r + 1) * v].iter().map(|x| x.as_f64()).collect();
            let (tok, lp) = choose(&row, temperature, &mut rngs[i]);
            out[i].tokens.push(tok);
            out[i].log_prob += lp;
            last[i] = tok;
            if is_terminal(tok) {
                out[i].finished = true;
            } else {
                still.push(i);
            }
        }
        active = still;
    }
    out
}

/// One sampled sequence for a single-pair memory.
pub fn sample_expression<T: Scalar>(model: &Model<T>, memory: &[T], temperature: f64, seed: u64, max_len: usize) -> Candidate {
    let n_mem = memory.len() / model.config().dim;
    sample_candidates(model, memory, n_mem, 1, temperature, seed, max_len).remove(0)
}
