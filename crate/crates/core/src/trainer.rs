//! Optimization loop: warmup + cosine schedule, AdamW with global-norm
//! clipping, token and FLOP accounting, evaluation points, checkpoints.
//!
//! Every random stream is derived from `(seed, step)` or `(seed, epoch)`,
//! so a run resumed from a checkpoint continues bit-identically.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ArtifactError;
use crate::model::{count_parameters, encode_pair, make_batch, Checkpoint, EncodedPair, Model, ModelConfig, ModelError, ParamKind};
use crate::sampler::ExprDatasetPair;
use crate::scaling::training_flops;
use crate::seed::derive;
use crate::tokenizer::Vocabulary;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Output tokens per feed-forward parameter.
    pub token_ratio: f64,
    /// Explicit output-token budget; overrides `token_ratio` when set.
    #[serde(default)]
    pub total_tokens: Option<u64>,
    /// Hard cap on optimizer steps; overrides the token budget when set.
    #[serde(default)]
    pub max_steps: Option<u64>,
    pub warmup_fraction: f64,
    pub decay_floor: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Evenly spaced validation points per run.
    pub eval_points: usize,
    /// Validation pairs used at each evaluation point (0 = all).
    #[serde(default)]
    pub val_pairs: usize,
    /// Train with dropout on.
    #[serde(default = "default_true")]
    pub dropout: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            peak_lr: 5e-4,
            token_ratio: 20.0,
            total_tokens: None,
            max_steps: None,
            warmup_fraction: 0.05,
            decay_floor: 0.01,
            clip: 1.0,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            seed: 0,
            eval_points: 20,
            val_pairs: 0,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.eval_points == 0 {
            return bad("batch_size and eval_points must be positive");
        }
        if !(self.peak_lr > 0.0 && self.token_ratio > 0.0 && self.clip > 0.0 && self.eps > 0.0) {
            return bad("peak_lr, token_ratio, clip and eps must be positive");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.decay_floor > 0.0 && self.decay_floor <= 1.0) || self.weight_decay < 0.0 {
            return bad("decay_floor must lie in (0, 1] and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over the first `warmup` fraction of
/// steps, then cosine decay to `floor · peak` at `total`. Steps past
/// `total` stay at the floor.
pub fn lr_schedule(step: u64, total: u64, peak: f64, warmup: f64, floor: f64) -> f64 {
    lr_at(step as f64, total, peak, warmup, floor)
}

/// The schedule at a fractional step.
pub fn lr_at(step: f64, total: u64, peak: f64, warmup: f64, floor: f64) -> f64 {
    let total = total.max(1) as f64;
    let s = step.min(total);
    let w = warmup * total;
    if s <= w {
        return peak * s / w;
    }
    let progress = (s - w) / (total - w);
    peak * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was NaN or infinite; nothing changed.
    Skipped,
}

/// Adam with decoupled weight decay on weight matrices only.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(model: &Model<f32>) -> Self {
        let mut decay = vec![false; model.params.len()];
        for e in &model.arch.entries {
            if e.kind == ParamKind::Weight {
                decay[e.range()].fill(true);
            }
        }
        Self::with_mask(decay)
    }

    pub fn with_mask(decay: Vec<bool>) -> Self {
        let n = decay.len();
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0, decay }
    }

    /// Clips `grads` to global norm `config.clip` and applies one update.
    /// Returns the outcome and the pre-clipping norm.
    pub fn step(&mut self, params: &mut [f32], grads: &mut [f32], lr: f64, config: &TrainConfig) -> (StepOutcome, f64) {
        let norm = grads.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return (StepOutcome::Skipped, norm);
        }
        if norm > config.clip {
            let s = (config.clip / norm) as f32;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let eps = config.eps as f32;
        let wd = (lr * config.weight_decay) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            params[i] -= step * self.m[i] / (self.v[i].sqrt() / c2s + eps);
        }
        (StepOutcome::Applied, norm)
    }
}

/// One evaluation point of a run (a line of `runs.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub flops: f64,
    pub lr: f64,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub val_loss: f64,
    pub epoch: u64,
    pub skipped_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub acc_solved: f64,
    pub acc_r2: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub n_params: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub series: Vec<EvalPoint>,
    pub final_val_loss: f64,
    #[serde(default)]
    pub metrics: Option<FinalMetrics>,
}

/// Budget and step estimate of a run before it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub n_params: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub budget_tokens_out: u64,
    pub mean_tokens_out: f64,
    pub tokens_in_per_pair: u64,
    pub steps: u64,
    pub tokens_in: u64,
    pub flops: f64,
}

pub fn plan(model: &ModelConfig, train: &TrainConfig, mean_tokens_out: f64) -> TrainPlan {
    let pc = count_parameters(model);
    let n = pc.encoder + pc.decoder;
    let budget = train.total_tokens.unwrap_or((train.token_ratio * n as f64).round() as u64);
    let per_step = mean_tokens_out * train.batch_size as f64;
    let steps = match train.max_steps {
        Some(s) => s,
        None => ((budget as f64 / per_step).ceil() as u64).max(1),
    };
    let tokens_in_per_pair = (model.n_points * (model.n_vars + 1)) as u64;
    let tokens_in = steps * train.batch_size as u64 * tokens_in_per_pair;
    let tokens_out = (steps as f64 * per_step).round() as u64;
    TrainPlan {
        n_params: pc.total,
        n_enc: pc.encoder,
        n_dec: pc.decoder,
        budget_tokens_out: budget,
        mean_tokens_out,
        tokens_in_per_pair,
        steps,
        tokens_in,
        flops: training_flops(pc.encoder as f64, pc.decoder as f64, tokens_in as f64, tokens_out as f64),
    }
}

pub fn encode_pairs(pairs: &[ExprDatasetPair], config: &ModelConfig) -> Result<Vec<EncodedPair>, TrainError> {
    let vocab = Vocabulary::new(config.n_vars);
    pairs.iter().map(|p| encode_pair(p, &vocab, config).map_err(TrainError::from)).collect()
}

/// Mean loss over `pairs` in evaluation mode, batched by `batch_size`.
pub fn mean_loss(model: &Model<f32>, pairs: &[EncodedPair], batch_size: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let batch = make_batch(&chunk.iter().collect::<Vec<_>>())?;
        let n = batch.target_tokens();
        total += model.loss(&batch)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(TrainError::Data("no validation tokens".into()));
    }
    Ok(total / count as f64)
}

/// Mutable state of a run; everything needed to resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: AdamW,
    pub step: u64,
    pub epoch: u64,
    /// Position inside the current epoch's permutation.
    pub cursor: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub skipped: u64,
    pub series: Vec<EvalPoint>,
    pub loss_sum: f64,
    pub loss_steps: u64,
}

impl TrainState {
    pub fn new(model_config: &ModelConfig, seed: u64) -> Result<Self, TrainError> {
        let model = Model::<f32>::new(model_config, derive(&[seed, 0x1417]))?;
        let optimizer = AdamW::new(&model);
        Ok(TrainState {
            model,
            optimizer,
            step: 0,
            epoch: 0,
            cursor: 0,
            tokens_in: 0,
            tokens_out: 0,
            skipped: 0,
            series: Vec::new(),
            loss_sum: 0.0,
            loss_steps: 0,
        })
    }

    pub fn to_checkpoint(&self, vocab_hash: &str, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, vocab_hash, self.step, vec![seed, self.epoch, self.cursor as u64]);
        ck.push_flat("adam.m", &self.optimizer.m);
        ck.push_flat("adam.v", &self.optimizer.v);
        ck.meta = serde_json::json!({
            "adam_t": self.optimizer.t,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "skipped": self.skipped,
            "loss_sum": self.loss_sum,
            "loss_steps": self.loss_steps,
            "series": self.series,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let model: Model<f32> = ck.to_model()?;
        let mut optimizer = AdamW::new(&model);
        let missing = || TrainError::Model(ModelError::Checkpoint("missing optimizer state".into()));
        optimizer.m = ck.flat("adam.m").ok_or_else(missing)?;
        optimizer.v = ck.flat("adam.v").ok_or_else(missing)?;
        let meta = &ck.meta;
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| TrainError::Model(ModelError::Checkpoint(format!("missing {k}"))));
        let num = |k: &str| -> Result<u64, TrainError> { get(k)?.as_u64().ok_or_else(missing) };
        optimizer.t = num("adam_t")?;
        let [_, epoch, cursor] = ck.rng_state[..] else { return Err(missing()) };
        Ok(TrainState {
            model,
            optimizer,
            step: ck.step,
            epoch,
            cursor: cursor as usize,
            tokens_in: num("tokens_in")?,
            tokens_out: num("tokens_out")?,
            skipped: num("skipped")?,
            series: serde_json::from_value(get("series")?).map_err(|e| TrainError::Data(e.to_string()))?,
            loss_sum: get("loss_sum")?.as_f64().ok_or_else(missing)?,
            loss_steps: num("loss_steps")?,
        })
    }
}

/// Options that do not change the result of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where `runs.jsonl`, `checkpoint.bin` and `run.json` go.
    pub out_dir: Option<PathBuf>,
    /// Stop (after checkpointing) once this step is reached.
    pub stop_at: Option<u64>,
    /// Finish early once the validation loss at an evaluation point is at
    /// or below this value.
    pub target_loss: Option<f64>,
    pub label: String,
}

fn permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(&[seed, 0xe90c, epoch])));
    idx
}

fn evaluation_steps(total: u64, points: usize) -> Vec<u64> {
    let mut v: Vec<u64> = (1..=points as u64).map(|k| (k * total).div_ceil(points as u64).max(1)).collect();
    v.dedup();
    v
}

/// Trains (or continues `state`) until the output-token budget or the step
/// cap is reached.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_pairs: &[EncodedPair],
    val_pairs: &[EncodedPair],
    state: Option<TrainState>,
    options: &RunOptions,
) -> Result<(RunRecord, TrainState), TrainError> {
    config.validate()?;
    model_config.validate()?;
    if train_pairs.is_empty() {
        return Err(TrainError::Data("empty training split".into()));
    }
    let mean_out = train_pairs.iter().map(|p| p.output_tokens() as f64).sum::<f64>() / train_pairs.len() as f64;
    let plan = plan(model_config, config, mean_out);
    let evals = evaluation_steps(plan.steps, config.eval_points);
    let vocab_hash = Vocabulary::new(model_config.n_vars).hash();
    let val: &[EncodedPair] = if config.val_pairs > 0 { &val_pairs[..config.val_pairs.min(val_pairs.len())] } else { val_pairs };
    let mut st = match state {
        Some(s) => s,
        None => TrainState::new(model_config, config.seed)?,
    };
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
    }
    let budget_done = |st: &TrainState| match config.max_steps {
        Some(m) => st.step >= m,
        None => st.tokens_out >= plan.budget_tokens_out,
    };
    let mut order = permutation(train_pairs.len(), config.seed, st.epoch);
    while !budget_done(&st) {
        if options.stop_at.is_some_and(|s| st.step >= s) {
            break;
        }
        let mut picked = Vec::with_capacity(config.batch_size);
        while picked.len() < config.batch_size {
            if st.cursor == order.len() {
                st.epoch += 1;
                st.cursor = 0;
                order = permutation(train_pairs.len(), config.seed, st.epoch);
                log::info!("epoch {} begins at step {}", st.epoch, st.step);
            }
            picked.push(&train_pairs[order[st.cursor]]);
            st.cursor += 1;
        }
        let batch = make_batch(&picked)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(&[config.seed, 0xd80, st.step]));
        let (loss, mut grads) = st.model.loss_and_grad(&batch, config.dropout.then_some(&mut rng))?;
        let lr = lr_schedule(st.step, plan.steps, config.peak_lr, config.warmup_fraction, config.decay_floor);
        let (outcome, _) = if loss.is_finite() {
            st.optimizer.step(&mut st.model.params, &mut grads, lr, config)
        } else {
            (StepOutcome::Skipped, f64::NAN)
        };
        if outcome == StepOutcome::Skipped {
            log::warn!("step {}: non-finite loss or gradient, update skipped", st.step);
            st.skipped += 1;
        } else {
            st.loss_sum += loss;
            st.loss_steps += 1;
        }
        st.step += 1;
        st.tokens_in += (batch.cells()) as u64;
        st.tokens_out += batch.target_tokens() as u64;

        if evals.contains(&st.step) || budget_done(&st) {
            let val_loss = if val.is_empty() { f64::NAN } else { mean_loss(&st.model, val, config.batch_size)? };
            let point = EvalPoint {
                step: st.step,
                tokens_in: st.tokens_in,
                tokens_out: st.tokens_out,
                flops: training_flops(plan.n_enc as f64, plan.n_dec as f64, st.tokens_in as f64, st.tokens_out as f64),
                lr,
                train_loss: if st.loss_steps > 0 { st.loss_sum / st.loss_steps as f64 } else { f64::NAN },
                val_loss,
                epoch: st.epoch,
                skipped_steps: st.skipped,
            };
            log::info!(
                "{} step {}/{}: train {:.4} val {:.4} D_out {}",
                options.label,
                point.step,
                plan.steps,
                point.train_loss,
                point.val_loss,
                point.tokens_out
            );
            st.loss_sum = 0.0;
            st.loss_steps = 0;
            st.series.push(point);
            if let Some(dir) = &options.out_dir {
                write_series(&dir.join("runs.jsonl"), &st.series)?;
                st.to_checkpoint(&vocab_hash, config.seed).write(&dir.join("checkpoint.bin"))?;
            }
            if options.target_loss.is_some_and(|t| val_loss <= t) {
                log::info!("{}: target loss reached at step {}", options.label, st.step);
                break;
            }
        }
        if st.skipped > 0 && st.skipped == st.step {
            return Err(TrainError::Diverged(st.step));
        }
    }
    if let (Some(dir), Some(_)) = (&options.out_dir, options.stop_at) {
        st.to_checkpoint(&vocab_hash, config.seed).write(&dir.join("checkpoint.bin"))?;
    }
    let record = RunRecord {
        label: options.label.clone(),
        model: model_config.clone(),
        train: config.clone(),
        n_params: plan.n_params,
        n_enc: plan.n_enc,
        n_dec: plan.n_dec,
        final_val_loss: st.series.last().map_or(f64::NAN, |p| p.val_loss),
        series: st.series.clone(),
        metrics: None,
    };
    if let Some(dir) = &options.out_dir {
        crate::artifact::write_json(&dir.join("run.json"), &record)?;
    }
    Ok((record, st))
}

fn write_series(path: &Path, series: &[EvalPoint]) -> Result<(), ArtifactError> {
    let mut buf = Vec::new();
    for p in series {
        serde_json::to_writer(&mut buf, p).expect("eval points serialize");
        buf.write_all(b"\n").expect("in-memory write");
    }
    crate::artifact::write_atomic(path, &buf)
}

pub fn read_series(path: &Path) -> Result<Vec<EvalPoint>, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ArtifactError::format(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let (peak, total) = (1e-3, 1000);
        assert_eq!(lr_schedule(0, total, peak, 0.05, 0.01), 0.0);
        assert!((lr_schedule(50, total, peak, 0.05, 0.01) - peak).abs() < 1e-15);
        assert!((lr_schedule(total, total, peak, 0.05, 0.01) - 0.01 * peak).abs() < 1e-15);
        assert!((lr_schedule(total + 10, total, peak, 0.05, 0.01) - 0.01 * peak).abs() < 1e-15);
        // continuity at the junction
        let w = 0.05 * total as f64;
        let jump = lr_at(w + 1e-12, total, peak, 0.05, 0.01) - lr_at(w - 1e-12, total, peak, 0.05, 0.01);
        assert!(jump.abs() < 1e-12 * peak);
        for s in 50..total {
            assert!(lr_schedule(s + 1, total, peak, 0.05, 0.01) <= lr_schedule(s, total, peak, 0.05, 0.01));
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig { weight_decay: 0.0, ..TrainConfig::default() }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut opt = AdamW::with_mask(vec![true; 3]);
        let mut p = vec![1.0f32, -2.0, 3.0];
        let mut g = vec![0.0f32; 3];
        opt.step(&mut p, &mut g, 1e-2, &cfg());
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn clipping_limits_global_norm() {
        let mut opt = AdamW::with_mask(vec![false; 4]);
        let mut p = vec![0.0f32; 4];
        let mut g = vec![5.0f32; 4]; // norm 10
        let (_, norm) = opt.step(&mut p, &mut g, 1e-3, &cfg());
        assert!((norm - 10.0).abs() < 1e-9);
        let clipped: f64 = g.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        assert!((clipped - 1.0).abs() < 1e-6);
        let mut bad = vec![f32::NAN, 0.0, 0.0, 0.0];
        assert_eq!(opt.step(&mut p, &mut bad, 1e-3, &cfg()).0, StepOutcome::Skipped);
    }

    #[test]
    fn quadratic_converges_to_its_minimum() {
        // f(x) = (x - 3)^2 / 2, minimum at 3.
        let mut opt = AdamW::with_mask(vec![false]);
        let mut x = vec![0.0f32];
        let c = TrainConfig { clip: 1e9, ..cfg() };
        for s in 0..500 {
            let mut g = vec![x[0] - 3.0];
            let lr = lr_schedule(s, 500, 0.2, 0.05, 0.01);
            opt.step(&mut x, &mut g, lr, &c);
        }
        assert!((x[0] - 3.0).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn weight_decay_skips_non_weight_tensors() {
        let model = Model::<f32>::new(&crate::model::tests_support::tiny(16), 0).unwrap();
        let opt = AdamW::new(&model);
        for e in &model.arch.entries {
            assert_eq!(opt.decay[e.offset], e.kind == ParamKind::Weight, "{}", e.name);
        }
    }

    fn corpus(n: usize, cfg: &ModelConfig, seed: u64) -> Vec<EncodedPair> {
        encode_pairs(&crate::model::tests_support::pairs(2, cfg.n_points, n, seed), cfg).unwrap()
    }

    #[test]
    fn single_batch_overfits() {
        let mc = ModelConfig { n_points: 16, ..ModelConfig::custom(64, 1, 4, 2) }.without_dropout();
        let data = corpus(8, &mc, 1);
        let tc = TrainConfig {
            batch_size: 8,
            peak_lr: 3e-3,
            max_steps: Some(200),
            weight_decay: 0.0,
            eval_points: 4,
            dropout: false,
            ..TrainConfig::default()
        };
        let (rec, st) = train(&mc, &tc, &data, &data[..2], None, &RunOptions::default()).unwrap();
        let losses: Vec<f64> = rec.series.iter().map(|p| p.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        let final_loss = mean_loss(&st.model, &data, 8).unwrap();
        assert!(final_loss < 0.05, "final loss {final_loss}");
    }

    #[test]
    fn budget_and_counters() {
        let mc = ModelConfig { n_points: 8, ..ModelConfig::custom(16, 1, 2, 2) };
        let data = corpus(10, &mc, 2);
        let tc = TrainConfig { batch_size: 4, total_tokens: Some(400), eval_points: 5, ..TrainConfig::default() };
        let (rec, _) = train(&mc, &tc, &data, &data[..3], None, &RunOptions::default()).unwrap();
        let last = rec.series.last().unwrap();
        let max_batch_tokens = 4 * data.iter().map(|p| p.output_tokens()).max().unwrap() as u64;
        assert!(last.tokens_out >= 400 && last.tokens_out < 400 + max_batch_tokens);
        assert_eq!(last.tokens_in, last.step * 4 * 8 * 3);
        for w in rec.series.windows(2) {
            assert!(w[1].step > w[0].step && w[1].tokens_in > w[0].tokens_in && w[1].flops > w[0].flops);
        }
        let p = plan(&mc, &TrainConfig { token_ratio: 2.0, ..tc.clone() }, 10.0);
        assert_eq!(p.budget_tokens_out, 400);
        let pr = plan(&mc, &TrainConfig { total_tokens: None, token_ratio: 2.0, ..tc }, 10.0);
        assert_eq!(pr.budget_tokens_out, 2 * (pr.n_enc + pr.n_dec) as u64);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let mc = ModelConfig { n_points: 8, ..ModelConfig::custom(16, 1, 2, 2) };
        let data = corpus(6, &mc, 3);
        let tc = TrainConfig { batch_size: 4, max_steps: Some(12), eval_points: 6, ..TrainConfig::default() };
        let (full, full_state) = train(&mc, &tc, &data, &data[..2], None, &RunOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), stop_at: Some(5), label: "r".into(), ..RunOptions::default() };
        train(&mc, &tc, &data, &data[..2], None, &opts).unwrap();
        let ck = Checkpoint::read(&dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(ck.step, 5);
        let state = TrainState::from_checkpoint(&ck).unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), stop_at: None, label: "r".into(), ..RunOptions::default() };
        let (resumed, resumed_state) = train(&mc, &tc, &data, &data[..2], Some(state), &opts).unwrap();
        assert_eq!(resumed.series, full.series);
        assert_eq!(resumed_state.model.params, full_state.model.params);
        assert_eq!(read_series(&dir.path().join("runs.jsonl")).unwrap(), full.series);
    }
}
