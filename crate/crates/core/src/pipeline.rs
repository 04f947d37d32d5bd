//! Pipeline configuration and the stages behind each CLI subcommand:
//! generate → sample → train → evaluate → analyze.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, config_hash, ArtifactError, Manifest};
use crate::evaluator::{evaluate_model, EvalConfig, EvalError, EvalReport};
use crate::generator::{build_expression_set, ExpressionSet, GeneratorConfig, GeneratorError};
use crate::model::{count_parameters, Checkpoint, ModelConfig, ModelError};
use crate::sampler::{build_corpus, Corpus, CorpusFormat, CorpusSummary, SamplerConfig, SamplerError};
use crate::scaling::{self, plot, ScalingAnalysis, ScalingError, ScalingPoint, SweepGrid, SweepPoint};
use crate::seed::Split;
use crate::trainer::{self, FinalMetrics, RunOptions, RunRecord, TrainConfig, TrainError, TrainPlan, TrainState};

/// Failure of a stage, grouped by process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

impl From<ArtifactError> for PipelineError {
    fn from(e: ArtifactError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<GeneratorError> for PipelineError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::InvalidConfig(_) | GeneratorError::ThresholdTooSmall { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<SamplerError> for PipelineError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => PipelineError::Config(e.to_string()),
            TrainError::Diverged(_) => PipelineError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => PipelineError::Config(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Train(t) => t.into(),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ScalingError> for PipelineError {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Table(_) | ScalingError::Coverage(_) | ScalingError::TooFewPoints(_) => PipelineError::Data(e.to_string()),
            _ => PipelineError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    ArtifactError::io(path, e).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_vars: u8,
    pub max_depth: usize,
    /// Target size `|E|` of the base expression set.
    pub expressions: usize,
    pub pairs_per_expression: usize,
    pub constant_probability: f64,
    pub constant_min: i64,
    pub constant_max: i64,
    pub n_points: usize,
    pub max_clusters: usize,
    pub retries: usize,
    pub val_expressions: usize,
    pub test_expressions: usize,
    pub shard_size: usize,
    pub format: CorpusFormat,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        DataConfig {
            n_vars: 2,
            max_depth: 3,
            expressions: 100_000,
            pairs_per_expression: s.pairs_per_expression,
            constant_probability: s.constant_probability,
            constant_min: s.constant_min,
            constant_max: s.constant_max,
            n_points: s.n_points,
            max_clusters: s.max_clusters,
            retries: s.retries,
            val_expressions: s.val_expressions,
            test_expressions: s.test_expressions,
            shard_size: s.shard_size,
            format: CorpusFormat::Binary,
        }
    }
}

impl DataConfig {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig { n_vars: self.n_vars, max_depth: self.max_depth, threshold: self.expressions, seed, ..GeneratorConfig::default() }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            pairs_per_expression: self.pairs_per_expression,
            constant_probability: self.constant_probability,
            constant_min: self.constant_min,
            constant_max: self.constant_max,
            n_points: self.n_points,
            max_clusters: self.max_clusters,
            retries: self.retries,
            val_expressions: self.val_expressions,
            test_expressions: self.test_expressions,
            shard_size: self.shard_size,
            seed,
        }
    }
}

/// Either a size label or custom `dim`/`layers`/`heads`. Labels are the
/// presets (`6.5M` ... `93M`) or `d<dim>l<layers>h<heads>`, e.g. `d64l1h4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    /// Residual and attention dropout rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { size: Some("6.5M".into()), dim: None, layers: None, heads: None, dropout: None }
    }
}

impl ModelSection {
    pub fn build(&self, n_vars: usize, n_points: usize) -> Result<ModelConfig, PipelineError> {
        let mut cfg = match (&self.size, self.dim, self.layers, self.heads) {
            (Some(label), None, None, None) => match parse_size_label(label) {
                Some((dim, layers, heads)) => ModelConfig::custom(dim, layers, heads, n_vars),
                None => ModelConfig::preset(label, n_vars)?,
            },
            (None, Some(dim), Some(layers), Some(heads)) => ModelConfig::custom(dim, layers, heads, n_vars),
            _ => {
                return Err(PipelineError::Config(
                    "model: give either `size` or all of `dim`, `layers` and `heads`".into(),
                ))
            }
        };
        cfg.n_points = n_points;
        if let Some(p) = self.dropout {
            cfg.residual_dropout = p;
            cfg.attention_dropout = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_size_label(label: &str) -> Option<(usize, usize, usize)> {
    let rest = label.strip_prefix('d')?;
    let (dim, rest) = rest.split_once('l')?;
    let (layers, heads) = rest.split_once('h')?;
    Some((dim.parse().ok()?, layers.parse().ok()?, heads.parse().ok()?))
}

/// Training options; the seed comes from the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub token_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    pub warmup_fraction: f64,
    pub decay_floor: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eval_points: usize,
    pub val_pairs: usize,
    pub dropout: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            peak_lr: t.peak_lr,
            token_ratio: t.token_ratio,
            total_tokens: t.total_tokens,
            max_steps: t.max_steps,
            warmup_fraction: t.warmup_fraction,
            decay_floor: t.decay_floor,
            clip: t.clip,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            eval_points: t.eval_points,
            val_pairs: t.val_pairs,
            dropout: t.dropout,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            token_ratio: self.token_ratio,
            total_tokens: self.total_tokens,
            max_steps: self.max_steps,
            warmup_fraction: self.warmup_fraction,
            decay_floor: self.decay_floor,
            clip: self.clip,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed,
            eval_points: self.eval_points,
            val_pairs: self.val_pairs,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { bins: 1500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.data.generator(self.seed).validate()?;
        self.data.sampler(self.seed).validate()?;
        self.model_config()?;
        self.train_config().validate()?;
        self.eval.validate()?;
        if self.analysis.bins == 0 {
            return Err(PipelineError::Config("analysis.bins must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, PipelineError> {
        self.model.build(usize::from(self.data.n_vars), self.data.n_points)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.config(self.seed)
    }
}

/// `expressions.jsonl`, `generation_stats.json` and a manifest in `dir`.
pub fn generate_expressions(cfg: &PipelineConfig, dir: &Path) -> Result<ExpressionSet, PipelineError> {
    let gen = cfg.data.generator(cfg.seed);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let set = build_expression_set(&gen)?;
    set.write_jsonl(&dir.join("expressions.jsonl"))?;
    set.write_stats(&dir.join("generation_stats.json"))?;
    let mut m = Manifest::new("generate-expressions", config_hash(&gen));
    m.files = vec!["expressions.jsonl".into(), "generation_stats.json".into()];
    m.details = serde_json::json!({ "expressions": set.len() });
    m.write(dir)?;
    Ok(set)
}

pub fn sample_data(cfg: &PipelineConfig, expr_dir: &Path, corpus_dir: &Path, force: bool) -> Result<CorpusSummary, PipelineError> {
    let gen = cfg.data.generator(cfg.seed);
    let manifest = Manifest::read(expr_dir)?;
    manifest.expect_hash(expr_dir, &config_hash(&gen), force)?;
    let set = ExpressionSet::read_jsonl(&expr_dir.join("expressions.jsonl"))?;
    let sampler = cfg.data.sampler(cfg.seed);
    Ok(build_corpus(&set, usize::from(cfg.data.n_vars), &sampler, cfg.data.format, Some(manifest.config_hash), corpus_dir)?)
}

fn open_corpus(cfg: &PipelineConfig, corpus_dir: &Path, force: bool) -> Result<Corpus, PipelineError> {
    let corpus = Corpus::open(corpus_dir)?;
    corpus.manifest.expect_hash(corpus_dir, &config_hash(&cfg.data.sampler(cfg.seed)), force)?;
    Ok(corpus)
}

/// Budget and step count of a training run, without training.
pub fn dry_run(cfg: &PipelineConfig, corpus_dir: &Path, force: bool) -> Result<TrainPlan, PipelineError> {
    let model = cfg.model_config()?;
    let corpus = open_corpus(cfg, corpus_dir, force)?;
    let train = trainer::encode_pairs(&corpus.split(Split::Train)?, &model)?;
    if train.is_empty() {
        return Err(PipelineError::Data("empty training split".into()));
    }
    let mean = train.iter().map(|p| p.output_tokens() as f64).sum::<f64>() / train.len() as f64;
    Ok(trainer::plan(&model, &cfg.train_config(), mean))
}

fn train_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    config_hash(&(model, train))
}

/// Trains one model on a corpus, resuming from `run_dir/checkpoint.bin`
/// when `resume` is set and a checkpoint exists.
pub fn train_run(cfg: &PipelineConfig, corpus_dir: &Path, run_dir: &Path, resume: bool, force: bool) -> Result<RunRecord, PipelineError> {
    let model = cfg.model_config()?;
    let train_cfg = cfg.train_config();
    let corpus = open_corpus(cfg, corpus_dir, force)?;
    let train = trainer::encode_pairs(&corpus.split(Split::Train)?, &model)?;
    let val = trainer::encode_pairs(&corpus.split(Split::Val)?, &model)?;
    let hash = train_hash(&model, &train_cfg);
    let ck_path = run_dir.join("checkpoint.bin");
    let state = if resume && ck_path.exists() {
        Manifest::read(run_dir)?.expect_hash(run_dir, &hash, force)?;
        Some(TrainState::from_checkpoint(&Checkpoint::read(&ck_path)?)?)
    } else {
        None
    };
    std::fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
    let mut m = Manifest::new("train", hash);
    m.input_hash = Some(corpus.manifest.config_hash.clone());
    m.files = vec!["runs.jsonl".into(), "checkpoint.bin".into(), "run.json".into()];
    m.write(run_dir)?;
    let label = run_dir.file_name().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    let options = RunOptions { out_dir: Some(run_dir.to_path_buf()), label, ..RunOptions::default() };
    let (record, _) = trainer::train(&model, &train_cfg, &train, &val, state, &options)?;
    if !record.final_val_loss.is_finite() && !val.is_empty() {
        return Err(PipelineError::Numerical(format!("final validation loss is {}", record.final_val_loss)));
    }
    Ok(record)
}

/// Evaluates `run_dir/checkpoint.bin` on the test split, writes the report
/// into `eval_dir` and records the metrics in `run_dir/run.json`.
pub fn evaluate_run(cfg: &PipelineConfig, corpus_dir: &Path, run_dir: &Path, eval_dir: &Path, force: bool) -> Result<EvalReport, PipelineError> {
    let corpus = open_corpus(cfg, corpus_dir, force)?;
    let train_manifest = Manifest::read(run_dir)?;
    let ck = Checkpoint::read(&run_dir.join("checkpoint.bin"))?;
    let model = ck.to_model::<f32>()?;
    let test = corpus.split(Split::Test)?;
    let report = evaluate_model(&model, &test, &cfg.eval)?;
    report.write(eval_dir)?;
    let mut m = Manifest::new("evaluate", config_hash(&cfg.eval));
    m.input_hash = Some(train_manifest.config_hash);
    m.files = vec!["eval_report.json".into(), "eval_summary.csv".into()];
    m.write(eval_dir)?;
    let run_json = run_dir.join("run.json");
    if run_json.exists() {
        let mut record: RunRecord = artifact::read_json(&run_json)?;
        record.metrics = Some(FinalMetrics { acc_solved: report.acc_solved, acc_r2: report.acc_r2, test_loss: report.test_loss });
        artifact::write_json(&run_json, &record)?;
    }
    Ok(report)
}

/// A run's final state as a scaling point.
pub fn scaling_point(record: &RunRecord) -> Option<ScalingPoint> {
    let last = record.series.last()?;
    Some(ScalingPoint {
        label: record.label.clone(),
        flops: last.flops,
        val_loss: record.final_val_loss,
        acc_solved: record.metrics.as_ref().map(|m| m.acc_solved),
        acc_r2: record.metrics.as_ref().map(|m| m.acc_r2),
        n_params: Some((record.n_enc + record.n_dec) as f64),
        tokens_out: Some(last.tokens_out as f64),
        batch_size: Some(record.train.batch_size as f64),
        learning_rate: Some(record.train.peak_lr),
    })
}

/// Every `run.json` at `dir` or up to two levels below it.
fn find_runs(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let candidate = dir.join("run.json");
    if candidate.exists() {
        out.push(candidate);
        return Ok(());
    }
    if depth == 0 {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_runs(&e, depth - 1, out)?;
    }
    Ok(())
}

/// Scaling points from run directories and results-table CSV files.
pub fn load_points(inputs: &[PathBuf]) -> Result<Vec<ScalingPoint>, PipelineError> {
    let mut points = Vec::new();
    for input in inputs {
        if input.extension().is_some_and(|e| e == "csv") {
            let text = std::fs::read_to_string(input).map_err(|e| io_err(input, e))?;
            points.extend(scaling::parse_results_csv(&text)?.iter().map(|r| r.to_point()));
        } else {
            let mut runs = Vec::new();
            find_runs(input, 2, &mut runs)?;
            if runs.is_empty() {
                return Err(PipelineError::Data(format!("{}: no run.json found", input.display())));
            }
            for r in runs {
                let record: RunRecord = artifact::read_json(&r)?;
                match scaling_point(&record) {
                    Some(p) => points.push(p),
                    None => log::warn!("{}: run has no evaluation points; skipped", r.display()),
                }
            }
        }
    }
    if points.is_empty() {
        return Err(PipelineError::Data("no scaling points".into()));
    }
    Ok(points)
}

/// Fits on `points` and writes `fits.json`, `pareto.csv` and the plots.
pub fn fit_scaling(points: &[ScalingPoint], bins: usize, out_dir: &Path) -> Result<ScalingAnalysis, PipelineError> {
    let analysis = scaling::analyze(points, bins)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    artifact::write_json(&out_dir.join("fits.json"), &analysis)?;
    artifact::write_atomic(&out_dir.join("pareto.csv"), scaling::pareto_csv(&analysis.front).as_bytes())?;
    let lo = points.iter().map(|p| p.flops).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.flops).fold(0.0, f64::max);
    let all = |get: &dyn Fn(&ScalingPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        points.iter().filter_map(|p| get(p).map(|v| (p.flops, v))).collect()
    };
    let front = |get: &dyn Fn(&ScalingPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        analysis.front.iter().filter_map(|p| get(p).map(|v| (p.flops, v))).collect()
    };
    let mut charts = vec![(
        "loss_vs_flops",
        plot::Chart::new("Validation loss vs training compute", "FLOPs", "validation loss")
            .with(plot::Series::markers("all runs", all(&|p| Some(p.val_loss))))
            .with(plot::Series::markers("Pareto front", front(&|p| Some(p.val_loss))))
            .with(plot::Series::fit("power law", &analysis.loss, lo, hi)),
    )];
    if let Some(fit) = &analysis.acc_solved {
        charts.push((
            "acc_solved_vs_flops",
            plot::Chart::new("Acc_solved vs training compute", "FLOPs", "Acc_solved")
                .with(plot::Series::markers("all runs", all(&|p| p.acc_solved)))
                .with(plot::Series::markers("Pareto front", front(&|p| p.acc_solved)))
                .with(plot::Series::fit("1 - a C^b", fit, lo, hi)),
        ));
    }
    if let Some(fit) = &analysis.acc_r2 {
        charts.push((
            "acc_r2_vs_flops",
            plot::Chart::new("Acc_R2>0.99 vs training compute", "FLOPs", "Acc_R2>0.99")
                .with(plot::Series::markers("all runs", all(&|p| p.acc_r2)))
                .with(plot::Series::markers("Pareto front", front(&|p| p.acc_r2)))
                .with(plot::Series::fit("1 - a C^b", fit, lo, hi)),
        ));
    }
    let trend = |get: &dyn Fn(&ScalingPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        analysis.front.iter().filter_map(|p| Some((p.n_params?, get(p)?))).collect()
    };
    let batches = trend(&|p| p.batch_size);
    if !batches.is_empty() {
        charts.push((
            "hparams_vs_params",
            plot::Chart::new("Pareto-front hyperparameters", "parameters", "value")
                .with(plot::Series::markers("batch size", batches))
                .with(plot::Series::markers("learning rate x 1e5", trend(&|p| p.learning_rate.map(|l| l * 1e5)))),
        ));
    }
    for (name, chart) in charts {
        artifact::write_atomic(&out_dir.join(format!("{name}.svg")), chart.to_svg().as_bytes())?;
        artifact::write_atomic(&out_dir.join(format!("{name}.csv")), chart.to_csv().as_bytes())?;
    }
    Ok(analysis)
}

/// Fits on the bundled results table.
pub fn reproduce_paper_fits(bins: usize, out_dir: Option<&Path>) -> Result<ScalingAnalysis, PipelineError> {
    let points: Vec<ScalingPoint> = scaling::paper_results().iter().map(|r| r.to_point()).collect();
    match out_dir {
        Some(dir) => fit_scaling(&points, bins, dir),
        None => Ok(scaling::analyze(&points, bins)?),
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub size: String,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub run_dir: PathBuf,
    pub n_params: usize,
    pub final_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<SweepRun>,
    pub grid: SweepGrid,
    /// Present when the grid covers enough cells for interpolation.
    pub hparams: Option<scaling::HparamReport>,
    pub hparams_error: Option<String>,
}

/// Trains every (size, batch, lr) combination into `out_dir` and fits the
/// optimal hyperparameters. Runs are independent, so up to `parallel` of
/// them execute at once.
pub fn sweep(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    sizes: &[String],
    batches: &[usize],
    lrs: &[f64],
    parallel: usize,
    force: bool,
) -> Result<SweepSummary, PipelineError> {
    if sizes.is_empty() || batches.is_empty() || lrs.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one size, batch size and learning rate".into()));
    }
    let mut cells = Vec::new();
    for size in sizes {
        for &b in batches {
            for &lr in lrs {
                let mut c = cfg.clone();
                c.model = ModelSection { size: Some(size.clone()), dim: None, layers: None, heads: None, dropout: cfg.model.dropout };
                c.train.batch_size = b;
                c.train.peak_lr = lr;
                c.validate()?;
                let dir = out_dir.join(size).join(format!("b{b}-lr{lr:e}"));
                cells.push((c, size.clone(), b, lr, dir));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun, PipelineError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((c, size, b, lr, dir)) = cells.get(i) else { break };
        let r = train_run(c, corpus_dir, dir, false, force).and_then(|rec| {
            let n_params = count_parameters(&c.model_config()?);
            Ok(SweepRun {
                size: size.clone(),
                batch_size: *b,
                peak_lr: *lr,
                run_dir: dir.clone(),
                n_params: n_params.encoder + n_params.decoder,
                final_val_loss: rec.final_val_loss,
            })
        });
        results.lock().expect("sweep results lock")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1).min(cells.len()) {
            s.spawn(worker);
        }
    });
    let mut runs = Vec::with_capacity(cells.len());
    for r in results.into_inner().expect("sweep results lock") {
        runs.push(r.expect("every cell ran")?);
    }
    let grid = SweepGrid {
        points: runs
            .iter()
            .map(|r| SweepPoint {
                n_params: r.n_params as f64,
                batch_size: r.batch_size as f64,
                learning_rate: r.peak_lr,
                loss: r.final_val_loss,
            })
            .collect(),
    };
    let (hparams, hparams_error) = match scaling::optimal_hparams(&grid) {
        Ok(h) => (Some(h), None),
        Err(e) => {
            log::warn!("no hyperparameter fit: {e}");
            (None, Some(e.to_string()))
        }
    };
    let summary = SweepSummary { runs, grid, hparams, hparams_error };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    artifact::write_json(&out_dir.join("sweep.json"), &summary)?;
    Ok(summary)
}
