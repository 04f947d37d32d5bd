//! Encoder-decoder transformer over numeric cell grids.
//!
//! Each dataset cell is embedded from its mantissa, exponent and column
//! role. Encoder layers alternate attention across the variables of one
//! data point with attention across the data points of one column; rows
//! carry no positional signal, so the encoder is equivariant under row
//! permutations. The decoder cross-attends only to the target column.

mod checkpoint;
mod config;
mod layers;
mod network;
mod sample;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, TensorRecord};
pub use config::{count_parameters, EncoderOrder, ModelConfig, ParameterCount, PRESETS};
pub use layers::{Block, ParamEntry, ParamKind};
pub use network::{Architecture, Batch};
pub use sample::{sample_candidates, sample_expression, Candidate};
pub use tensor::Scalar;

use crate::sampler::ExprDatasetPair;
use crate::tokenizer::{self, Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("cannot encode pair: {0}")]
    Encode(#[from] tokenizer::TokenizerError),
    #[error("pair has {found} points × {found_vars} variables, model expects {rows} × {vars}")]
    Shape { found: usize, found_vars: usize, rows: usize, vars: usize },
    #[error("empty batch or no target tokens")]
    Empty,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Artifact(#[from] crate::artifact::ArtifactError),
}

/// A pair converted to model inputs once, reused across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub rows: usize,
    pub cols: usize,
    pub mantissa: Vec<f64>,
    pub exponent: Vec<usize>,
    /// BOS, expression tokens, EOS.
    pub tokens: Vec<u32>,
}

impl EncodedPair {
    /// Cells in the numeric grid (`D_in` contribution).
    pub fn input_tokens(&self) -> usize {
        self.rows * self.cols
    }

    /// Non-PAD target tokens (`D_out` contribution).
    pub fn output_tokens(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// Grid cells of a pair: its inputs followed by the target in every row.
pub fn encode_grid(pair: &ExprDatasetPair) -> Result<(Vec<f64>, Vec<usize>), ModelError> {
    let cols = pair.n_vars + 1;
    let mut mantissa = Vec::with_capacity(pair.n_points() * cols);
    let mut exponent = Vec::with_capacity(pair.n_points() * cols);
    for r in 0..pair.n_points() {
        for &x in pair.row(r).iter().chain(std::iter::once(&pair.targets[r])) {
            let code = tokenizer::encode_value(x)?;
            mantissa.push(code.mantissa);
            exponent.push(code.exponent_index());
        }
    }
    Ok((mantissa, exponent))
}

pub fn encode_pair(pair: &ExprDatasetPair, vocab: &Vocabulary, config: &ModelConfig) -> Result<EncodedPair, ModelError> {
    if pair.n_points() != config.n_points || pair.n_vars != config.n_vars {
        return Err(ModelError::Shape {
            found: pair.n_points(),
            found_vars: pair.n_vars,
            rows: config.n_points,
            vars: config.n_vars,
        });
    }
    let (mantissa, exponent) = encode_grid(pair)?;
    let latex = crate::expr::to_latex(&pair.parse_expression());
    let tokens = vocab.encode_expression(&latex)?;
    Ok(EncodedPair { rows: pair.n_points(), cols: pair.n_vars + 1, mantissa, exponent, tokens })
}

/// Stacks pairs into a batch, padding token sequences with PAD.
pub fn make_batch(pairs: &[&EncodedPair]) -> Result<Batch, ModelError> {
    let first = pairs.first().ok_or(ModelError::Empty)?;
    let seq_len = pairs.iter().map(|p| p.tokens.len()).max().unwrap_or(0);
    let mut batch = Batch {
        size: pairs.len(),
        rows: first.rows,
        cols: first.cols,
        mantissa: Vec::with_capacity(pairs.len() * first.rows * first.cols),
        exponent: Vec::with_capacity(pairs.len() * first.rows * first.cols),
        tokens: Vec::with_capacity(pairs.len() * seq_len),
        seq_len,
    };
    for p in pairs {
        assert_eq!((p.rows, p.cols), (first.rows, first.cols), "pairs in a batch share their grid shape");
        assert_eq!(p.tokens.first(), Some(&BOS));
        batch.mantissa.extend_from_slice(&p.mantissa);
        batch.exponent.extend_from_slice(&p.exponent);
        batch.tokens.extend_from_slice(&p.tokens);
        batch.tokens.extend(std::iter::repeat_n(PAD, seq_len - p.tokens.len()));
    }
    Ok(batch)
}

/// Architecture plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub arch: Architecture,
    pub params: Vec<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let arch = Architecture::new(config);
        let params = arch.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { arch: self.arch.clone(), params: self.params.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.arch.entries.iter().find(|e| e.name == name)
    }

    /// Embedded cell grid, `batch × rows × cols × dim`.
    pub fn embed_cells(&self, batch: &Batch) -> Vec<T> {
        self.arch.embed(&self.params, batch)
    }

    /// Encoder layers applied to the embedded grid (before the final norm).
    pub fn encode(&self, batch: &Batch) -> Vec<T> {
        let h0 = self.arch.embed(&self.params, batch);
        self.arch.encoder_forward(&self.params, h0, batch, None).0
    }

    /// Normalized target-column embeddings used as decoder memory.
    pub fn memory(&self, batch: &Batch) -> Vec<T> {
        self.arch.memory(&self.params, batch)
    }

    /// Next-token logits at every position of `tokens` (one sequence per
    /// `memory` block of `n_mem` cells).
    pub fn decoder_logits(&self, memory: &[T], n_mem: usize, tokens: &[u32], len: usize) -> Result<Vec<T>, ModelError> {
        if len == 0 || len > self.config().max_output_len {
            return Err(ModelError::Config(format!("prefix length {len} outside 1..={}", self.config().max_output_len)));
        }
        let size = tokens.len() / len;
        Ok(self.arch.decoder_forward(&self.params, tokens, size, len, memory, n_mem, None).0)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let (loss, count) = self.arch.loss(&self.params, batch);
        if count == 0 {
            return Err(ModelError::Empty);
        }
        Ok(loss)
    }

    /// Loss and gradient; `dropout_rng` switches on train mode.
    pub fn loss_and_grad(&self, batch: &Batch, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Vec<T>), ModelError> {
        if batch.target_tokens() == 0 {
            return Err(ModelError::Empty);
        }
        Ok(self.arch.loss_and_grad(&self.params, batch, dropout_rng))
    }
}

pub(crate) fn is_terminal(token: u32) -> bool {
    token == EOS
}


#[cfg(test)]
pub(crate) mod tests_support {
    pub(crate) use super::tests::pairs;

    pub(crate) fn tiny(dim: usize) -> super::ModelConfig {
        super::tests::tiny_config(dim, 1, 8)
    }
}
