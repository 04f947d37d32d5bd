use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tokenizer::{self, Vocabulary};

/// Sublayer order inside one encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderOrder {
    /// Across variables within a row first, then across rows.
    ColumnThenRow,
    RowThenColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_output_len: usize,
    pub n_vars: usize,
    pub n_points: usize,
    pub residual_dropout: f64,
    pub attention_dropout: f64,
    pub init_scale: f64,
    pub ln_eps: f64,
    pub encoder_order: EncoderOrder,
}

/// The five sizes of the published grid: (label, dim, layers, heads).
pub const PRESETS: [(&str, usize, usize, usize); 5] =
    [("6.5M", 256, 3, 4), ("13.5M", 320, 4, 5), ("24M", 384, 5, 6), ("45.5M", 448, 7, 7), ("93M", 512, 11, 8)];

impl ModelConfig {
    /// A model with head dimension 64 where possible and a 4× MLP.
    pub fn custom(dim: usize, layers: usize, heads: usize, n_vars: usize) -> Self {
        ModelConfig {
            dim,
            enc_layers: layers,
            dec_layers: layers,
            heads,
            head_dim: dim / heads.max(1),
            mlp_dim: 4 * dim,
            vocab_size: Vocabulary::new(n_vars).len(),
            max_output_len: tokenizer::MAX_OUTPUT_LEN,
            n_vars,
            n_points: 64,
            residual_dropout: 0.1,
            attention_dropout: 0.1,
            init_scale: 0.02,
            ln_eps: 1e-5,
            encoder_order: EncoderOrder::ColumnThenRow,
        }
    }

    pub fn preset(label: &str, n_vars: usize) -> Result<Self, ModelError> {
        let (_, dim, layers, heads) = PRESETS
            .iter()
            .find(|p| p.0 == label)
            .ok_or_else(|| ModelError::Config(format!("unknown model size '{label}'")))?;
        Ok(Self::custom(*dim, *layers, *heads, n_vars))
    }

    pub fn without_dropout(mut self) -> Self {
        self.residual_dropout = 0.0;
        self.attention_dropout = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.dim == 0 || self.heads == 0 || self.head_dim == 0 || self.mlp_dim == 0 {
            return bad("all dimensions must be positive");
        }
        if self.vocab_size < 3 || self.n_vars == 0 || self.n_points == 0 {
            return bad("vocabulary, variable and point counts must be positive");
        }
        if self.max_output_len < 2 {
            return bad("max_output_len must be at least 2");
        }
        if !(0.0..1.0).contains(&self.residual_dropout) || !(0.0..1.0).contains(&self.attention_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.init_scale <= 0.0 || self.ln_eps <= 0.0 {
            return bad("init_scale and ln_eps must be positive");
        }
        Ok(())
    }
}

/// Parameter counts. `encoder` and `decoder` cover attention and MLP
/// matrices with their biases; `total` counts every trainable value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub embeddings: usize,
    pub norms: usize,
    pub head: usize,
}

pub fn count_parameters(config: &ModelConfig) -> ParameterCount {
    use super::layers::{Block, ParamKind};
    let arch = super::network::Architecture::new(config);
    let mut c = ParameterCount { total: 0, encoder: 0, decoder: 0, embeddings: 0, norms: 0, head: 0 };
    for e in &arch.entries {
        let n = e.len();
        c.total += n;
        match (e.block, e.kind, e.feed_forward) {
            (_, ParamKind::Norm, _) => c.norms += n,
            (Block::Encoder, _, true) => c.encoder += n,
            (Block::Decoder, _, true) => c.decoder += n,
            (Block::Head, _, _) => c.head += n,
            _ => c.embeddings += n,
        }
    }
    c
}
