//! Parameterized building blocks addressing a flat parameter buffer.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{self, c, NormCache, Scalar};

/// Role of a parameter tensor, used for weight decay selection and counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Embedding,
}

/// Which part of the network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Block {
    Embedding,
    Encoder,
    Decoder,
    Head,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
    pub block: Block,
    /// Attention or MLP tensor (counted in `N_enc` / `N_dec`).
    pub feed_forward: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Registry that hands out consecutive ranges of the flat buffer.
#[derive(Debug, Default, Clone)]
pub struct LayoutBuilder {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    pub block: Option<Block>,
    pub feed_forward: bool,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> Range<usize> {
        let entry = ParamEntry {
            name,
            shape,
            offset: self.total,
            kind,
            block: self.block.expect("block set before adding parameters"),
            feed_forward: self.feed_forward,
        };
        self.total += entry.len();
        let r = entry.range();
        self.entries.push(entry);
        r
    }

    pub fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> Linear {
        let w = self.add(format!("{name}.weight"), vec![n_in, n_out], ParamKind::Weight);
        let b = self.add(format!("{name}.bias"), vec![n_out], ParamKind::Bias);
        Linear { w, b, n_in, n_out }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let ff = std::mem::replace(&mut self.feed_forward, false);
        let g = self.add(format!("{name}.gamma"), vec![dim], ParamKind::Norm);
        let b = self.add(format!("{name}.beta"), vec![dim], ParamKind::Norm);
        self.feed_forward = ff;
        Norm { g, b, dim }
    }
}

/// `y = x · W + b` with `W: n_in × n_out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], rows: usize) -> Vec<T> {
        tensor::linear(x, &p[self.w.clone()], &p[self.b.clone()], rows, self.n_in, self.n_out)
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        tensor::matmul_at_acc(x, dy, &mut g[self.w.clone()], rows, self.n_in, self.n_out);
        let db = &mut g[self.b.clone()];
        for row in dy.chunks(self.n_out) {
            tensor::add_in_place(db, row);
        }
        let mut dx = vec![T::zero(); rows * self.n_in];
        tensor::matmul_bt(dy, &p[self.w.clone()], &mut dx, rows, self.n_in, self.n_out, false);
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub g: Range<usize>,
    pub b: Range<usize>,
    pub dim: usize,
}

impl Norm {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], eps: f64) -> (Vec<T>, NormCache<T>) {
        tensor::layer_norm(x, &p[self.g.clone()], &p[self.b.clone()], eps, self.dim)
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], dy: &[T], cache: &NormCache<T>) -> Vec<T> {
        let mut dgamma = vec![T::zero(); self.dim];
        let mut dbeta = vec![T::zero(); self.dim];
        let dx = tensor::layer_norm_backward(dy, cache, &p[self.g.clone()], &mut dgamma, &mut dbeta, self.dim);
        tensor::add_in_place(&mut g[self.g.clone()], &dgamma);
        tensor::add_in_place(&mut g[self.b.clone()], &dbeta);
        dx
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache<T> {
    x: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl Mlp {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], rows: usize) -> (Vec<T>, MlpCache<T>) {
        let pre = self.fc1.forward(p, x, rows);
        let act: Vec<T> = pre.iter().map(|&v| tensor::gelu(v)).collect();
        let y = self.fc2.forward(p, &act, rows);
        (y, MlpCache { x: x.to_vec(), pre, act })
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], dy: &[T], cache: &MlpCache<T>, rows: usize) -> Vec<T> {
        let mut dact = self.fc2.backward(p, g, &cache.act, dy, rows);
        for (d, &v) in dact.iter_mut().zip(&cache.pre) {
            *d = *d * tensor::gelu_grad(v);
        }
        self.fc1.backward(p, g, &cache.x, &dact, rows)
    }
}

/// Multi-head attention applied independently within `groups` sets.
///
/// Queries come from `groups × s` rows, keys and values from `groups × t`
/// rows of a (possibly different) source.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

pub struct AttentionCache<T> {
    xq: Vec<T>,
    xkv: Option<Vec<T>>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    /// Attention-dropout mask over `probs`, when active.
    mask: Option<Vec<T>>,
    ctx: Vec<T>,
    groups: usize,
    s: usize,
    t: usize,
}

/// Dimensions and mode of one attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttentionShape {
    pub groups: usize,
    pub s: usize,
    pub t: usize,
    pub causal: bool,
}

impl Attention {
    pub fn new(b: &mut LayoutBuilder, name: &str, dim: usize, heads: usize, head_dim: usize) -> Self {
        let inner = heads * head_dim;
        Attention {
            q: b.linear(&format!("{name}.q"), dim, inner),
            k: b.linear(&format!("{name}.k"), dim, inner),
            v: b.linear(&format!("{name}.v"), dim, inner),
            o: b.linear(&format!("{name}.o"), inner, dim),
            heads,
            head_dim,
        }
    }

    fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    /// `xkv = None` means self-attention.
    pub fn forward<T: Scalar>(
        &self,
        p: &[T],
        xq: &[T],
        xkv: Option<&[T]>,
        shape: AttentionShape,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Vec<T>, AttentionCache<T>) {
        let AttentionShape { groups, s, t, causal } = shape;
        let inner = self.inner();
        let dh = self.head_dim;
        let src = xkv.unwrap_or(xq);
        let q = self.q.forward(p, xq, groups * s);
        let k = self.k.forward(p, src, groups * t);
        let v = self.v.forward(p, src, groups * t);
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); groups * self.heads * s * t];
        for g in 0..groups {
            for h in 0..self.heads {
                let block = &mut probs[(g * self.heads + h) * s * t..][..s * t];
                T::gemm_raw(
                    s,
                    dh,
                    t,
                    scale,
                    &q[g * s * inner + h * dh..],
                    (inner, 1),
                    &k[g * t * inner + h * dh..],
                    (1, inner),
                    T::zero(),
                    block,
                    (t, 1),
                );
                if causal {
                    for i in 0..s {
                        for j in i + 1..t {
                            block[i * t + j] = T::neg_infinity();
                        }
                    }
                }
                tensor::softmax_rows(block, t);
            }
        }
        let mask = dropout.and_then(|(rate, rng)| {
            (rate > 0.0).then(|| tensor::dropout_mask::<T>(probs.len(), rate, rng))
        });
        let used: std::borrow::Cow<[T]> = match &mask {
            Some(m) => {
                let mut d = probs.clone();
                tensor::mul_in_place(&mut d, m);
                std::borrow::Cow::Owned(d)
            }
            None => std::borrow::Cow::Borrowed(&probs),
        };
        let mut ctx = vec![T::zero(); groups * s * inner];
        for g in 0..groups {
            for h in 0..self.heads {
                T::gemm_raw(
                    s,
                    t,
                    dh,
                    T::one(),
                    &used[(g * self.heads + h) * s * t..],
                    (t, 1),
                    &v[g * t * inner + h * dh..],
                    (inner, 1),
                    T::zero(),
                    &mut ctx[g * s * inner + h * dh..],
                    (inner, 1),
                );
            }
        }
        drop(used);
        let out = self.o.forward(p, &ctx, groups * s);
        let cache = AttentionCache {
            xq: xq.to_vec(),
            xkv: xkv.map(|x| x.to_vec()),
            q,
            k,
            v,
            probs,
            mask,
            ctx,
            groups,
            s,
            t,
        };
        (out, cache)
    }

    /// Returns `(dxq, dxkv)`; for self-attention `dxkv` is already folded
    /// into `dxq` and returned as `None`.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        grads: &mut [T],
        dout: &[T],
        cache: &AttentionCache<T>,
    ) -> (Vec<T>, Option<Vec<T>>) {
        let AttentionCache { groups, s, t, .. } = *cache;
        let inner = self.inner();
        let dh = self.head_dim;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let dctx = self.o.backward(p, grads, &cache.ctx, dout, groups * s);
        let mut dq = vec![T::zero(); groups * s * inner];
        let mut dk = vec![T::zero(); groups * t * inner];
        let mut dv = vec![T::zero(); groups * t * inner];
        let mut dp = vec![T::zero(); s * t];
        let mut used = vec![T::zero(); s * t];
        for g in 0..groups {
            for h in 0..self.heads {
                let off = (g * self.heads + h) * s * t;
                let probs = &cache.probs[off..off + s * t];
                used.copy_from_slice(probs);
                if let Some(m) = &cache.mask {
                    tensor::mul_in_place(&mut used, &m[off..off + s * t]);
                }
                let qo = g * s * inner + h * dh;
                let ko = g * t * inner + h * dh;
                // dV = usedᵀ · dctx
                T::gemm_raw(t, s, dh, T::one(), &used, (1, t), &dctx[qo..], (inner, 1), T::one(), &mut dv[ko..], (inner, 1));
                // d(used) = dctx · Vᵀ
                T::gemm_raw(s, dh, t, T::one(), &dctx[qo..], (inner, 1), &cache.v[ko..], (1, inner), T::zero(), &mut dp, (t, 1));
                if let Some(m) = &cache.mask {
                    tensor::mul_in_place(&mut dp, &m[off..off + s * t]);
                }
                // softmax backward, scaled for the score scale
                for i in 0..s {
                    let pr = &probs[i * t..(i + 1) * t];
                    let row = &mut dp[i * t..(i + 1) * t];
                    let dot: T = pr.iter().zip(row.iter()).map(|(&a, &b)| a * b).sum();
                    for (d, &pv) in row.iter_mut().zip(pr) {
                        *d = pv * (*d - dot) * scale;
                    }
                }
                T::gemm_raw(s, t, dh, T::one(), &dp, (t, 1), &cache.k[ko..], (inner, 1), T::one(), &mut dq[qo..], (inner, 1));
                T::gemm_raw(t, s, dh, T::one(), &dp, (1, t), &cache.q[qo..], (inner, 1), T::one(), &mut dk[ko..], (inner, 1));
            }
        }
        let src = cache.xkv.as_deref().unwrap_or(&cache.xq);
        let mut dxq = self.q.backward(p, grads, &cache.xq, &dq, groups * s);
        let mut dxkv = self.k.backward(p, grads, src, &dk, groups * t);
        tensor::add_in_place(&mut dxkv, &self.v.backward(p, grads, src, &dv, groups * t));
        if cache.xkv.is_none() {
            tensor::add_in_place(&mut dxq, &dxkv);
            (dxq, None)
        } else {
            (dxq, Some(dxkv))
        }
    }
}

/// Residual dropout mask for `len` activations, if active.
pub fn residual_mask<T: Scalar>(len: usize, dropout: &mut Option<(f64, &mut ChaCha8Rng)>) -> Option<Vec<T>> {
    match dropout {
        Some((rate, rng)) if *rate > 0.0 => Some(tensor::dropout_mask(len, *rate, *rng)),
        _ => None,
    }
}

/// Draws an `N(0, std²)` initial value.
pub fn normal<T: Scalar>(rng: &mut impl Rng, std: f64) -> T {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    c(z * std)
}
