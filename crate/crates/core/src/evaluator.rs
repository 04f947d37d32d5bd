//! Best-of-n sampling evaluation: `Acc_solved`, `Acc_{R²>0.99}` and test
//! loss, averaged over evaluation seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::expr::{symbolic_equal, Expression};
use crate::model::{make_batch, sample_candidates, EncodedPair, Model, ModelError};
use crate::sampler::ExprDatasetPair;
use crate::seed::derive;
use crate::tokenizer::Vocabulary;
use crate::trainer::{self, TrainError};

/// Best R² above this counts towards `Acc_{R²>0.99}`.
pub const R2_THRESHOLD: f64 = 0.99;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} targets, {1} predictions")]
    Length(usize, usize),
    #[error("need at least two points, got {0}")]
    TooShort(usize),
    #[error("empty test split")]
    Empty,
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
///
/// Constant targets score 1 when matched exactly and `-inf` otherwise; a
/// non-finite prediction scores `-inf`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Length(y_true.len(), y_pred.len()));
    }
    if y_true.len() < 2 {
        return Err(EvalError::TooShort(y_true.len()));
    }
    if y_pred.iter().any(|p| !p.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    if !ss_res.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// R² of `expr` on the pair's own points.
pub fn score(expr: &Expression, pair: &ExprDatasetPair) -> f64 {
    let pred: Vec<f64> = (0..pair.n_points()).map(|i| expr.evaluate(pair.row(i))).collect();
    r_squared(&pair.targets, &pred).unwrap_or(f64::NEG_INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_candidates: usize,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    /// Pairs per batch when computing the test loss.
    pub loss_batch_size: usize,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_candidates: 128, temperature: 1.0, seeds: vec![0, 1, 2], loss_batch_size: 64, threads: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_candidates == 0 {
            return Err(EvalError::Config("n_candidates must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::Config("at least one seed is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(EvalError::Config(format!("temperature {} must be finite and non-negative", self.temperature)));
        }
        if self.loss_batch_size == 0 {
            return Err(EvalError::Config("loss_batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome for one test expression under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionDetail {
    pub index: usize,
    pub ground_truth: String,
    pub best_candidate: Option<String>,
    /// `-inf` (serialized as null) when no candidate parsed.
    #[serde(with = "r2_serde")]
    pub best_r2: f64,
    pub solved: bool,
    pub parsed: usize,
}

mod r2_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Picks the candidate with the highest R² (first on ties) and checks it
/// against the ground truth. `None` entries are parse failures.
pub fn select_best(pair: &ExprDatasetPair, index: usize, candidates: &[Option<Expression>]) -> ExpressionDetail {
    let truth = pair.parse_expression();
    let mut best: Option<(&Expression, f64)> = None;
    let mut parsed = 0;
    for expr in candidates.iter().flatten() {
        parsed += 1;
        let r2 = score(expr, pair);
        if best.is_none_or(|(_, b)| r2 > b) {
            best = Some((expr, r2));
        }
    }
    ExpressionDetail {
        index,
        ground_truth: pair.expression.clone(),
        best_candidate: best.map(|(e, _)| e.to_string()),
        best_r2: best.map_or(f64::NEG_INFINITY, |(_, r)| r),
        solved: best.is_some_and(|(e, _)| symbolic_equal(e, &truth)),
        parsed,
    }
}

/// Seed of the candidate streams for expression `index`.
pub fn expression_seed(eval_seed: u64, index: usize) -> u64 {
    derive(&[eval_seed, 0xe7a1, index as u64])
}

/// Samples `n_candidates` sequences for one pair and keeps the best.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_expression(
    model: &Model<f32>,
    vocab: &Vocabulary,
    pair: &ExprDatasetPair,
    encoded: &EncodedPair,
    index: usize,
    n_candidates: usize,
    temperature: f64,
    seed: u64,
) -> Result<ExpressionDetail, EvalError> {
    let batch = make_batch(&[encoded])?;
    let memory = model.memory(&batch);
    let max_len = model.config().max_output_len;
    let candidates = sample_candidates(model, &memory, batch.rows, n_candidates, temperature, seed, max_len);
    let parsed: Vec<Option<Expression>> = candidates
        .iter()
        .map(|c| if c.finished { vocab.decode_expression(&c.tokens).ok() } else { None })
        .collect();
    Ok(select_best(pair, index, &parsed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub acc_solved: f64,
    pub acc_r2: f64,
    pub details: Vec<ExpressionDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub n_expressions: usize,
    pub n_candidates: usize,
    pub per_seed: Vec<SeedMetrics>,
    pub acc_solved: f64,
    pub acc_r2: f64,
    pub test_loss: f64,
}

impl SeedMetrics {
    fn from_details(seed: u64, details: Vec<ExpressionDetail>) -> Self {
        let n = details.len() as f64;
        let solved = details.iter().filter(|d| d.solved).count() as f64;
        let r2 = details.iter().filter(|d| d.best_r2 > R2_THRESHOLD).count() as f64;
        SeedMetrics { seed, acc_solved: solved / n, acc_r2: r2 / n, details }
    }
}

fn workers(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Evaluates every pair under every seed and averages over seeds.
pub fn evaluate_model(model: &Model<f32>, pairs: &[ExprDatasetPair], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let encoded = trainer::encode_pairs(pairs, model.config())?;
    let vocab = Vocabulary::new(model.config().n_vars);
    let test_loss = trainer::mean_loss(model, &encoded, config.loss_batch_size)?;
    let threads = workers(config.threads).min(pairs.len());
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = |i: usize| {
            evaluate_expression(
                model,
                &vocab,
                &pairs[i],
                &encoded[i],
                i,
                config.n_candidates,
                config.temperature,
                expression_seed(seed, i),
            )
        };
        let mut details: Vec<ExpressionDetail> = if threads <= 1 {
            (0..pairs.len()).map(run).collect::<Result<_, _>>()?
        } else {
            let chunks: Vec<Result<Vec<ExpressionDetail>, EvalError>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let run = &run;
                        s.spawn(move || (t..pairs.len()).step_by(threads).map(run).collect::<Result<Vec<_>, _>>())
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
            });
            let mut all = Vec::with_capacity(pairs.len());
            for c in chunks {
                all.extend(c?);
            }
            all
        };
        details.sort_by_key(|d| d.index);
        let m = SeedMetrics::from_details(seed, details);
        log::info!("eval seed {seed}: acc_solved {:.4} acc_r2 {:.4}", m.acc_solved, m.acc_r2);
        per_seed.push(m);
    }
    let k = per_seed.len() as f64;
    Ok(EvalReport {
        seeds: config.seeds.clone(),
        n_expressions: pairs.len(),
        n_candidates: config.n_candidates,
        acc_solved: per_seed.iter().map(|m| m.acc_solved).sum::<f64>() / k,
        acc_r2: per_seed.iter().map(|m| m.acc_r2).sum::<f64>() / k,
        per_seed,
        test_loss,
    })
}

impl EvalReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("seed,acc_solved,acc_r2,test_loss\n");
        for m in &self.per_seed {
            out.push_str(&format!("{},{},{},{}\n", m.seed, m.acc_solved, m.acc_r2, self.test_loss));
        }
        out.push_str(&format!("mean,{},{},{}\n", self.acc_solved, self.acc_r2, self.test_loss));
        out
    }

    /// Writes `eval_report.json` and `eval_summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ArtifactError> {
        std::fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
        artifact::write_json(&dir.join("eval_report.json"), self)?;
        artifact::write_atomic(&dir.join("eval_summary.csv"), self.summary_csv().as_bytes())
    }
}
