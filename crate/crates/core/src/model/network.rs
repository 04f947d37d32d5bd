//! Parameter layout and the batched forward/backward pass.
//!
//! Activations are flat row-major buffers. The cell grid of a batch is laid
//! out as `[batch][row][column][dim]`; the decoder stream as
//! `[batch][position][dim]`.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use super::config::{EncoderOrder, ModelConfig};
use super::layers::{
    residual_mask, Attention, AttentionCache, AttentionShape, Block, LayoutBuilder, Linear, Mlp, MlpCache, Norm,
    ParamEntry, ParamKind,
};
use super::tensor::{self, c, NormCache, Scalar};
use crate::tokenizer::{EXPONENT_RANGE, PAD};

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_col: Norm,
    pub col: Attention,
    pub ln_row: Norm,
    pub row: Attention,
    pub ln_mlp: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_self: Norm,
    pub self_attn: Attention,
    pub ln_cross: Norm,
    pub cross: Attention,
    pub ln_mlp: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct Architecture {
    pub config: ModelConfig,
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    pub mantissa_w: Range<usize>,
    pub mantissa_b: Range<usize>,
    pub exponent_table: Range<usize>,
    pub role_table: Range<usize>,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: Norm,
    pub token_table: Range<usize>,
    pub position_table: Range<usize>,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: Norm,
    pub head: Linear,
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.dim;
        let mut b = LayoutBuilder { block: Some(Block::Embedding), ..Default::default() };
        let mantissa_w = b.add("cell.mantissa.weight".into(), vec![1, d], ParamKind::Embedding);
        let mantissa_b = b.add("cell.mantissa.bias".into(), vec![d], ParamKind::Embedding);
        let exponent_table = b.add("cell.exponent".into(), vec![EXPONENT_RANGE, d], ParamKind::Embedding);
        let role_table = b.add("cell.role".into(), vec![config.n_vars + 1, d], ParamKind::Embedding);

        b.block = Some(Block::Encoder);
        let mut encoder = Vec::new();
        for i in 0..config.enc_layers {
            b.feed_forward = true;
            let name = format!("encoder.{i}");
            let ln_col = b.norm(&format!("{name}.ln_col"), d);
            let col = Attention::new(&mut b, &format!("{name}.col"), d, config.heads, config.head_dim);
            let ln_row = b.norm(&format!("{name}.ln_row"), d);
            let row = Attention::new(&mut b, &format!("{name}.row"), d, config.heads, config.head_dim);
            let ln_mlp = b.norm(&format!("{name}.ln_mlp"), d);
            let fc1 = b.linear(&format!("{name}.mlp.fc1"), d, config.mlp_dim);
            let fc2 = b.linear(&format!("{name}.mlp.fc2"), config.mlp_dim, d);
            encoder.push(EncoderLayer { ln_col, col, ln_row, row, ln_mlp, mlp: Mlp { fc1, fc2 } });
        }
        b.feed_forward = false;
        let encoder_norm = b.norm("encoder.ln_out", d);

        b.block = Some(Block::Embedding);
        let token_table = b.add("decoder.token".into(), vec![config.vocab_size, d], ParamKind::Embedding);
        let position_table = b.add("decoder.position".into(), vec![config.max_output_len, d], ParamKind::Embedding);

        b.block = Some(Block::Decoder);
        let mut decoder = Vec::new();
        for i in 0..config.dec_layers {
            b.feed_forward = true;
            let name = format!("decoder.{i}");
            let ln_self = b.norm(&format!("{name}.ln_self"), d);
            let self_attn = Attention::new(&mut b, &format!("{name}.self"), d, config.heads, config.head_dim);
            let ln_cross = b.norm(&format!("{name}.ln_cross"), d);
            let cross = Attention::new(&mut b, &format!("{name}.cross"), d, config.heads, config.head_dim);
            let ln_mlp = b.norm(&format!("{name}.ln_mlp"), d);
            let fc1 = b.linear(&format!("{name}.mlp.fc1"), d, config.mlp_dim);
            let fc2 = b.linear(&format!("{name}.mlp.fc2"), config.mlp_dim, d);
            decoder.push(DecoderLayer { ln_self, self_attn, ln_cross, cross, ln_mlp, mlp: Mlp { fc1, fc2 } });
        }
        b.feed_forward = false;
        let decoder_norm = b.norm("decoder.ln_out", d);

        b.block = Some(Block::Head);
        let head = b.linear("head", d, config.vocab_size);

        Architecture {
            config: config.clone(),
            entries: b.entries,
            total: b.total,
            mantissa_w,
            mantissa_b,
            exponent_table,
            role_table,
            encoder,
            encoder_norm,
            token_table,
            position_table,
            decoder,
            decoder_norm,
            head,
        }
    }

    /// Fresh parameters: normal weights and embeddings with the configured
    /// scale, zero biases, unit norm gains.
    pub fn init<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let mut p = vec![T::zero(); self.total];
        for e in &self.entries {
            let r = e.range();
            match e.kind {
                ParamKind::Weight | ParamKind::Embedding if !e.name.ends_with(".bias") => {
                    for v in &mut p[r] {
                        *v = super::layers::normal(rng, self.config.init_scale);
                    }
                }
                ParamKind::Norm if e.name.ends_with(".gamma") => p[r].fill(T::one()),
                _ => {}
            }
        }
        p
    }
}

/// Encoded inputs of a batch of expression-dataset pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    /// `size × rows × cols` mantissas.
    pub mantissa: Vec<f64>,
    /// Matching exponent table indices.
    pub exponent: Vec<usize>,
    /// `size × seq_len` token ids starting with BOS, padded with PAD.
    pub tokens: Vec<u32>,
    pub seq_len: usize,
}

impl Batch {
    pub fn cells(&self) -> usize {
        self.size * self.rows * self.cols
    }

    /// Decoder input positions per sequence.
    pub fn positions(&self) -> usize {
        self.seq_len - 1
    }

    /// Non-PAD target tokens (everything after BOS).
    pub fn target_tokens(&self) -> usize {
        (0..self.size)
            .map(|b| self.tokens[b * self.seq_len + 1..(b + 1) * self.seq_len].iter().filter(|&&t| t != PAD).count())
            .sum()
    }
}

pub(crate) struct EncoderCache<T> {
    steps: Vec<SubCache<T>>,
}

enum SubCache<T> {
    Col { norm: NormCache<T>, attn: AttentionCache<T>, mask: Option<Vec<T>> },
    Row { norm: NormCache<T>, attn: AttentionCache<T>, mask: Option<Vec<T>> },
    Mlp { norm: NormCache<T>, mlp: MlpCache<T>, mask: Option<Vec<T>>, rows: usize },
}

pub(crate) struct DecoderCache<T> {
    layers: Vec<DecoderLayerCache<T>>,
    final_norm: NormCache<T>,
    normed: Vec<T>,
}

struct DecoderLayerCache<T> {
    self_norm: NormCache<T>,
    self_attn: AttentionCache<T>,
    self_mask: Option<Vec<T>>,
    cross_norm: NormCache<T>,
    cross: AttentionCache<T>,
    cross_mask: Option<Vec<T>>,
    mlp_norm: NormCache<T>,
    mlp: MlpCache<T>,
    mlp_mask: Option<Vec<T>>,
}

/// `[b][r][c][d]` to `[b][c][r][d]`.
fn transpose_grid<T: Scalar>(x: &[T], b: usize, r: usize, cols: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ri in 0..r {
            for ci in 0..cols {
                let src = ((bi * r + ri) * cols + ci) * d;
                let dst = ((bi * cols + ci) * r + ri) * d;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        tensor::mul_in_place(x, m);
    }
}

type Dropout<'a> = Option<&'a mut ChaCha8Rng>;

impl Architecture {
    fn order(&self) -> [u8; 3] {
        match self.config.encoder_order {
            EncoderOrder::ColumnThenRow => [0, 1, 2],
            EncoderOrder::RowThenColumn => [1, 0, 2],
        }
    }

    /// Cell embeddings: mantissa projection + exponent row + column role row.
    pub fn embed<T: Scalar>(&self, p: &[T], batch: &Batch) -> Vec<T> {
        let d = self.config.dim;
        let mut out = vec![T::zero(); batch.cells() * d];
        let w = &p[self.mantissa_w.clone()];
        let bias = &p[self.mantissa_b.clone()];
        for (i, cell) in out.chunks_mut(d).enumerate() {
            let m = c::<T>(batch.mantissa[i]);
            let e = &p[self.exponent_table.start + batch.exponent[i] * d..][..d];
            let role = i % batch.cols;
            let rr = &p[self.role_table.start + role * d..][..d];
            for j in 0..d {
                cell[j] = m * w[j] + bias[j] + e[j] + rr[j];
            }
        }
        out
    }

    fn embed_backward<T: Scalar>(&self, g: &mut [T], batch: &Batch, dh: &[T]) {
        let d = self.config.dim;
        for (i, dcell) in dh.chunks(d).enumerate() {
            let m = c::<T>(batch.mantissa[i]);
            for j in 0..d {
                g[self.mantissa_w.start + j] = g[self.mantissa_w.start + j] + m * dcell[j];
                g[self.mantissa_b.start + j] = g[self.mantissa_b.start + j] + dcell[j];
            }
            let eo = self.exponent_table.start + batch.exponent[i] * d;
            tensor::add_in_place(&mut g[eo..eo + d], dcell);
            let ro = self.role_table.start + (i % batch.cols) * d;
            tensor::add_in_place(&mut g[ro..ro + d], dcell);
        }
    }

    /// Runs the encoder layers over an embedded grid.
    pub(crate) fn encoder_forward<T: Scalar>(
        &self,
        p: &[T],
        mut h: Vec<T>,
        batch: &Batch,
        mut rng: Dropout<'_>,
    ) -> (Vec<T>, EncoderCache<T>) {
        let cfg = &self.config;
        let (bs, r, cols, d) = (batch.size, batch.rows, batch.cols, cfg.dim);
        let n = bs * r * cols;
        let mut steps = Vec::new();
        for layer in &self.encoder {
            for step in self.order() {
                match step {
                    0 => {
                        let (a, norm) = layer.ln_col.forward(p, &h, cfg.ln_eps);
                        let shape = AttentionShape { groups: bs * r, s: cols, t: cols, causal: false };
                        let (mut out, attn) =
                            layer.col.forward(p, &a, None, shape, rng.as_deref_mut().map(|g| (cfg.attention_dropout, g)));
                        let mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
                        apply_mask(&mut out, &mask);
                        tensor::add_in_place(&mut h, &out);
                        steps.push(SubCache::Col { norm, attn, mask });
                    }
                    1 => {
                        let (a, norm) = layer.ln_row.forward(p, &h, cfg.ln_eps);
                        let at = transpose_grid(&a, bs, r, cols, d);
                        let shape = AttentionShape { groups: bs * cols, s: r, t: r, causal: false };
                        let (out_t, attn) =
                            layer.row.forward(p, &at, None, shape, rng.as_deref_mut().map(|g| (cfg.attention_dropout, g)));
                        let mut out = transpose_grid(&out_t, bs, cols, r, d);
                        let mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
                        apply_mask(&mut out, &mask);
                        tensor::add_in_place(&mut h, &out);
                        steps.push(SubCache::Row { norm, attn, mask });
                    }
                    _ => {
                        let (a, norm) = layer.ln_mlp.forward(p, &h, cfg.ln_eps);
                        let (mut out, mlp) = layer.mlp.forward(p, &a, n);
                        let mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
                        apply_mask(&mut out, &mask);
                        tensor::add_in_place(&mut h, &out);
                        steps.push(SubCache::Mlp { norm, mlp, mask, rows: n });
                    }
                }
            }
        }
        (h, EncoderCache { steps })
    }

    fn encoder_backward<T: Scalar>(&self, p: &[T], g: &mut [T], batch: &Batch, cache: &EncoderCache<T>, mut dh: Vec<T>) -> Vec<T> {
        let (bs, r, cols, d) = (batch.size, batch.rows, batch.cols, self.config.dim);
        let order = self.order();
        let mut idx = cache.steps.len();
        for layer in self.encoder.iter().rev() {
            for _ in order.iter().rev() {
                idx -= 1;
                let mut dout = dh.clone();
                match &cache.steps[idx] {
                    SubCache::Col { norm, attn, mask } => {
                        apply_mask(&mut dout, mask);
                        let (da, _) = layer.col.backward(p, g, &dout, attn);
                        tensor::add_in_place(&mut dh, &layer.ln_col.backward(p, g, &da, norm));
                    }
                    SubCache::Row { norm, attn, mask } => {
                        apply_mask(&mut dout, mask);
                        let dout_t = transpose_grid(&dout, bs, r, cols, d);
                        let (dat, _) = layer.row.backward(p, g, &dout_t, attn);
                        let da = transpose_grid(&dat, bs, cols, r, d);
                        tensor::add_in_place(&mut dh, &layer.ln_row.backward(p, g, &da, norm));
                    }
                    SubCache::Mlp { norm, mlp, mask, rows } => {
                        apply_mask(&mut dout, mask);
                        let da = layer.mlp.backward(p, g, &dout, mlp, *rows);
                        tensor::add_in_place(&mut dh, &layer.ln_mlp.backward(p, g, &da, norm));
                    }
                }
            }
        }
        dh
    }

    /// Target-column rows of an encoder output grid, `[batch][row][dim]`.
    pub fn target_cells<T: Scalar>(&self, h: &[T], batch: &Batch) -> Vec<T> {
        let d = self.config.dim;
        let mut out = Vec::with_capacity(batch.size * batch.rows * d);
        for cell in 0..batch.size * batch.rows {
            let i = cell * batch.cols + batch.cols - 1;
            out.extend_from_slice(&h[i * d..(i + 1) * d]);
        }
        out
    }

    /// Decoder input embeddings for `tokens` laid out `size × len`.
    pub fn embed_tokens<T: Scalar>(&self, p: &[T], tokens: &[u32], len: usize) -> Vec<T> {
        let d = self.config.dim;
        let mut x = vec![T::zero(); tokens.len() * d];
        for (i, (&tok, row)) in tokens.iter().zip(x.chunks_mut(d)).enumerate() {
            let te = &p[self.token_table.start + tok as usize * d..][..d];
            let pe = &p[self.position_table.start + (i % len) * d..][..d];
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }
        x
    }

    /// Decoder over `size` sequences of `len` input tokens attending to
    /// `memory` (`size × n_mem × dim`). Returns logits `size × len × vocab`.
    pub(crate) fn decoder_forward<T: Scalar>(
        &self,
        p: &[T],
        tokens: &[u32],
        size: usize,
        len: usize,
        memory: &[T],
        n_mem: usize,
        mut rng: Dropout<'_>,
    ) -> (Vec<T>, DecoderCache<T>) {
        let cfg = &self.config;
        let rows = size * len;
        let mut x = self.embed_tokens(p, tokens, len);
        let mut layers = Vec::new();
        for layer in &self.decoder {
            let (a, self_norm) = layer.ln_self.forward(p, &x, cfg.ln_eps);
            let shape = AttentionShape { groups: size, s: len, t: len, causal: true };
            let (mut out, self_attn) =
                layer.self_attn.forward(p, &a, None, shape, rng.as_deref_mut().map(|g| (cfg.attention_dropout, g)));
            let self_mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
            apply_mask(&mut out, &self_mask);
            tensor::add_in_place(&mut x, &out);

            let (a, cross_norm) = layer.ln_cross.forward(p, &x, cfg.ln_eps);
            let shape = AttentionShape { groups: size, s: len, t: n_mem, causal: false };
            let (mut out, cross) =
                layer.cross.forward(p, &a, Some(memory), shape, rng.as_deref_mut().map(|g| (cfg.attention_dropout, g)));
            let cross_mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
            apply_mask(&mut out, &cross_mask);
            tensor::add_in_place(&mut x, &out);

            let (a, mlp_norm) = layer.ln_mlp.forward(p, &x, cfg.ln_eps);
            let (mut out, mlp) = layer.mlp.forward(p, &a, rows);
            let mlp_mask = residual_mask(out.len(), &mut rng.as_deref_mut().map(|g| (cfg.residual_dropout, g)));
            apply_mask(&mut out, &mlp_mask);
            tensor::add_in_place(&mut x, &out);
            layers.push(DecoderLayerCache {
                self_norm,
                self_attn,
                self_mask,
                cross_norm,
                cross,
                cross_mask,
                mlp_norm,
                mlp,
                mlp_mask,
            });
        }
        let (normed, final_norm) = self.decoder_norm.forward(p, &x, cfg.ln_eps);
        let logits = self.head.forward(p, &normed, rows);
        (logits, DecoderCache { layers, final_norm, normed })
    }

    /// Returns the gradient with respect to `memory`.
    #[allow(clippy::too_many_arguments)]
    fn decoder_backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        tokens: &[u32],
        len: usize,
        cache: &DecoderCache<T>,
        dlogits: &[T],
        memory_len: usize,
    ) -> Vec<T> {
        let d = self.config.dim;
        let rows = tokens.len();
        let dnormed = self.head.backward(p, g, &cache.normed, dlogits, rows);
        let mut dx = self.decoder_norm.backward(p, g, &dnormed, &cache.final_norm);
        let mut dmemory = vec![T::zero(); memory_len];
        for (layer, lc) in self.decoder.iter().zip(&cache.layers).rev() {
            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.mlp_mask);
            let da = layer.mlp.backward(p, g, &dout, &lc.mlp, rows);
            tensor::add_in_place(&mut dx, &layer.ln_mlp.backward(p, g, &da, &lc.mlp_norm));

            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.cross_mask);
            let (da, dmem) = layer.cross.backward(p, g, &dout, &lc.cross);
            tensor::add_in_place(&mut dmemory, &dmem.expect("cross-attention has a separate source"));
            tensor::add_in_place(&mut dx, &layer.ln_cross.backward(p, g, &da, &lc.cross_norm));

            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.self_mask);
            let (da, _) = layer.self_attn.backward(p, g, &dout, &lc.self_attn);
            tensor::add_in_place(&mut dx, &layer.ln_self.backward(p, g, &da, &lc.self_norm));
        }
        for (i, (&tok, drow)) in tokens.iter().zip(dx.chunks(d)).enumerate() {
            let to = self.token_table.start + tok as usize * d;
            tensor::add_in_place(&mut g[to..to + d], drow);
            let po = self.position_table.start + (i % len) * d;
            tensor::add_in_place(&mut g[po..po + d], drow);
        }
        dmemory
    }

    fn split_tokens(batch: &Batch) -> (Vec<u32>, Vec<u32>) {
        let mut inputs = Vec::with_capacity(batch.size * batch.positions());
        let mut targets = Vec::with_capacity(batch.size * batch.positions());
        for seq in batch.tokens.chunks(batch.seq_len) {
            inputs.extend_from_slice(&seq[..batch.seq_len - 1]);
            targets.extend_from_slice(&seq[1..]);
        }
        (inputs, targets)
    }

    /// Mean cross-entropy over non-PAD targets, and its gradient with
    /// respect to the logits when `grad` is set.
    pub fn cross_entropy<T: Scalar>(&self, logits: &[T], targets: &[u32], grad: bool) -> (f64, usize, Vec<T>) {
        let v = self.config.vocab_size;
        let count = targets.iter().filter(|&&t| t != PAD).count();
        let mut dlogits = if grad { vec![T::zero(); logits.len()] } else { Vec::new() };
        if count == 0 {
            return (f64::NAN, 0, dlogits);
        }
        let mut total = 0.0;
        let inv = 1.0 / count as f64;
        for (i, &t) in targets.iter().enumerate() {
            if t == PAD {
                continue;
            }
            let row = &logits[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
            let sum: f64 = row.iter().map(|x| (x.as_f64() - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t as usize].as_f64();
            if grad {
                let drow = &mut dlogits[i * v..(i + 1) * v];
                for (j, dv) in drow.iter_mut().enumerate() {
                    let prob = (row[j].as_f64() - lse).exp();
                    let y = if j == t as usize { 1.0 } else { 0.0 };
                    *dv = c((prob - y) * inv);
                }
            }
        }
        (total * inv, count, dlogits)
    }

    fn memory_forward<T: Scalar>(&self, p: &[T], batch: &Batch, rng: Dropout<'_>) -> (Vec<T>, EncoderCache<T>, NormCache<T>) {
        let h0 = self.embed(p, batch);
        let (h, enc) = self.encoder_forward(p, h0, batch, rng);
        let targets = self.target_cells(&h, batch);
        let (memory, norm) = self.encoder_norm.forward(p, &targets, self.config.ln_eps);
        (memory, enc, norm)
    }

    /// Encoder output for the target column after the final norm.
    pub fn memory<T: Scalar>(&self, p: &[T], batch: &Batch) -> Vec<T> {
        self.memory_forward(p, batch, None).0
    }

    /// Loss without gradients (evaluation mode).
    pub fn loss<T: Scalar>(&self, p: &[T], batch: &Batch) -> (f64, usize) {
        let (memory, _, _) = self.memory_forward(p, batch, None);
        let (inputs, targets) = Self::split_tokens(batch);
        let (logits, _) = self.decoder_forward(p, &inputs, batch.size, batch.positions(), &memory, batch.rows, None);
        let (loss, count, _) = self.cross_entropy(&logits, &targets, false);
        (loss, count)
    }

    /// Loss and exact gradients. Dropout is active iff `rng` is given.
    pub fn loss_and_grad<T: Scalar>(&self, p: &[T], batch: &Batch, mut rng: Dropout<'_>) -> (f64, Vec<T>) {
        let d = self.config.dim;
        let (memory, enc, enc_norm) = self.memory_forward(p, batch, rng.as_deref_mut());
        let (inputs, targets) = Self::split_tokens(batch);
        let len = batch.positions();
        let (logits, dec) = self.decoder_forward(p, &inputs, batch.size, len, &memory, batch.rows, rng);
        let (loss, _, dlogits) = self.cross_entropy(&logits, &targets, true);
        let mut g = vec![T::zero(); self.total];
        let dmemory = self.decoder_backward(p, &mut g, &inputs, len, &dec, &dlogits, memory.len());
        let dtargets = self.encoder_norm.backward(p, &mut g, &dmemory, &enc_norm);
        let mut dh = vec![T::zero(); batch.cells() * d];
        for cell in 0..batch.size * batch.rows {
            let i = cell * batch.cols + batch.cols - 1;
            dh[i * d..(i + 1) * d].copy_from_slice(&dtargets[cell * d..(cell + 1) * d]);
        }
        let dh0 = self.encoder_backward(p, &mut g, batch, &enc, dh);
        self.embed_backward(&mut g, batch, &dh0);
        (loss, g)
    }
}
