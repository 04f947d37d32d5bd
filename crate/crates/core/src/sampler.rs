//! Expression-dataset pairs: constant insertion, mixture input sampling with
//! a Haar rotation, target evaluation with retries, and corpus shards.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, config_hash, ArtifactError, Manifest};
use crate::expr::{canonicalize_with, to_latex, BinaryOp, CanonOptions, Expression};
use crate::generator::ExpressionSet;
use crate::seed::{derive, pair_seed, Split};
use crate::tokenizer::{self, Vocabulary};

const SHARD_MAGIC: &[u8; 4] = b"SYMS";
const SHARD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("the expression set is empty")]
    EmptySet,
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Pairs attempted per base expression (`k`).
    pub pairs_per_expression: usize,
    /// Per-site probability of a multiplicative and of an additive constant.
    pub constant_probability: f64,
    pub constant_min: i64,
    pub constant_max: i64,
    pub n_points: usize,
    pub max_clusters: usize,
    /// Dataset attempts per pair before rejection.
    pub retries: usize,
    pub val_expressions: usize,
    pub test_expressions: usize,
    /// Maximum pairs per training shard file.
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            pairs_per_expression: 3600,
            constant_probability: 0.2,
            constant_min: -9,
            constant_max: 9,
            n_points: 64,
            max_clusters: 5,
            retries: 5,
            val_expressions: 1000,
            test_expressions: 1000,
            shard_size: 100_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.constant_probability) {
            return bad("constant_probability must lie in [0, 1]");
        }
        if self.constant_min > -1 || self.constant_max < 2 {
            return bad("the constant range must contain -1 and 2");
        }
        if self.n_points == 0 || self.n_points > usize::from(u16::MAX) {
            return bad("n_points must be in 1..=65535");
        }
        if self.max_clusters == 0 {
            return bad("max_clusters must be at least 1");
        }
        if self.retries == 0 {
            return bad("retries must be at least 1");
        }
        if self.shard_size == 0 {
            return bad("shard_size must be at least 1");
        }
        Ok(())
    }
}

/// One training example. `inputs` is row-major, `n_points × n_vars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprDatasetPair {
    pub expression: String,
    pub n_vars: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    #[serde(default)]
    pub base_id: Option<u32>,
    pub seed: u64,
}

impl ExprDatasetPair {
    pub fn n_points(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn parse_expression(&self) -> Expression {
        Expression::parse(&self.expression).expect("pairs hold canonical strings")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
    pub shapes: Vec<Shape>,
    /// Applied as `x = R · p` to every sampled point `p`.
    pub rotation: DMatrix<f64>,
}

fn draw_constant(min: i64, max: i64, excluded: &[i64], rng: &mut impl Rng) -> i64 {
    loop {
        let c = rng.random_range(min..=max);
        if !excluded.contains(&c) {
            return c;
        }
    }
}

/// Wraps every variable leaf and every unary node `s` as `a·s + b`, each of
/// `a` and `b` present independently with probability `p`.
pub fn insert_constants<R: Rng>(base: &Expression, p: f64, range: (i64, i64), rng: &mut R) -> Expression {
    fn wrap<R: Rng>(s: Expression, p: f64, range: (i64, i64), rng: &mut R) -> Expression {
        let mut out = s;
        if rng.random_bool(p) {
            let a = draw_constant(range.0, range.1, &[0, 1], rng);
            out = Expression::binary(BinaryOp::Mul, Expression::constant(a), out);
        }
        if rng.random_bool(p) {
            let b = draw_constant(range.0, range.1, &[0], rng);
            out = Expression::binary(BinaryOp::Add, out, Expression::constant(b));
        }
        out
    }
    match base {
        Expression::Variable(_) => wrap(base.clone(), p, range, rng),
        Expression::Constant(_) => base.clone(),
        Expression::Unary(op, c) => {
            let inner = insert_constants(c, p, range, rng);
            wrap(Expression::unary(*op, inner), p, range, rng)
        }
        Expression::Binary(op, l, r) => {
            let l = insert_constants(l, p, range, rng);
            let r = insert_constants(r, p, range, rng);
            Expression::binary(*op, l, r)
        }
    }
}

/// Haar-distributed rotation in SO(d): QR of a standard normal matrix with
/// the signs of R's diagonal moved into Q, then one column flipped if the
/// determinant is negative.
pub fn haar_rotation(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    assert!(d >= 1, "dimension must be positive");
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn sample_mixture_spec(n_vars: usize, max_clusters: usize, rng: &mut impl Rng) -> MixtureSpec {
    let k = rng.random_range(1..=max_clusters);
    let weights = if k == 1 {
        vec![1.0]
    } else {
        // Dirichlet(1, ..., 1): normalized unit-rate exponentials.
        let w: Vec<f64> = (0..k).map(|_| rng.sample(Exp1)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    let mut centroids = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    let mut shapes = Vec::with_capacity(k);
    for _ in 0..k {
        centroids.push((0..n_vars).map(|_| rng.sample(StandardNormal)).collect());
        // uniform on (0, 1]
        scales.push((0..n_vars).map(|_| 1.0 - rng.random::<f64>()).collect());
        shapes.push(if rng.random_bool(0.5) { Shape::Gaussian } else { Shape::Uniform });
    }
    let rotation = haar_rotation(n_vars, rng);
    MixtureSpec { weights, centroids, scales, shapes, rotation }
}

/// Draws `n_points` rows from a mixture. Returns row-major `n_points × d`.
pub fn sample_from_spec(spec: &MixtureSpec, n_points: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d = spec.rotation.nrows();
    let unit = Uniform::new_inclusive(-3f64.sqrt(), 3f64.sqrt()).expect("valid range");
    let mut out = Vec::with_capacity(n_points * d);
    let mut p = vec![0.0; d];
    for _ in 0..n_points {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = spec.weights.len() - 1;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        for (j, pj) in p.iter_mut().enumerate() {
            let z: f64 = match spec.shapes[c] {
                Shape::Gaussian => rng.sample(StandardNormal),
                Shape::Uniform => unit.sample(rng),
            };
            *pj = spec.centroids[c][j] + spec.scales[c][j] * z;
        }
        for i in 0..d {
            out.push((0..d).map(|j| spec.rotation[(i, j)] * p[j]).sum());
        }
    }
    out
}

pub fn sample_input_dataset(n_points: usize, n_vars: usize, max_clusters: usize, rng: &mut impl Rng) -> Vec<f64> {
    let spec = sample_mixture_spec(n_vars, max_clusters, rng);
    sample_from_spec(&spec, n_points, rng)
}

/// Why a pair draw produced no example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// The instantiated expression could not be canonicalized.
    Canonicalization,
    /// Its LaTeX form has no valid token sequence (too long).
    Tokenization,
    /// Every dataset attempt produced an unusable target.
    Datasets,
}

/// A value is usable if it is finite, tokenizer-representable and fits a
/// 32-bit float without flushing to zero.
fn usable(y: f64) -> bool {
    tokenizer::is_representable(y) && (y == 0.0 || ((y.abs() as f32).is_normal() && (y.abs() as f32).is_finite()))
}

pub fn sample_pair(
    base: &Expression,
    n_vars: usize,
    config: &SamplerConfig,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<ExprDatasetPair, Rejection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = insert_constants(base, config.constant_probability, (config.constant_min, config.constant_max), &mut rng);
    let canon = canonicalize_with(&inst, CanonOptions::exact()).map_err(|_| Rejection::Canonicalization)?;
    if canon.is_constant() {
        return Err(Rejection::Canonicalization);
    }
    vocab.encode_expression(&to_latex(canon.expression())).map_err(|_| Rejection::Tokenization)?;
    let expr = canon.expression();
    'attempt: for _ in 0..config.retries {
        let mut inputs = sample_input_dataset(config.n_points, n_vars, config.max_clusters, &mut rng);
        // Inputs are stored in 32-bit; evaluate on the stored values.
        for x in inputs.iter_mut() {
            *x = *x as f32 as f64;
            if !usable(*x) {
                continue 'attempt;
            }
        }
        let mut targets = Vec::with_capacity(config.n_points);
        for row in inputs.chunks(n_vars) {
            let y = expr.evaluate(row);
            if !usable(y) {
                continue 'attempt;
            }
            targets.push(y);
        }
        return Ok(ExprDatasetPair {
            expression: canon.as_str().to_string(),
            n_vars,
            inputs,
            targets,
            base_id: None,
            seed,
        });
    }
    Err(Rejection::Datasets)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub attempted: u64,
    pub emitted: u64,
    pub rejected_canonicalization: u64,
    pub rejected_tokenization: u64,
    pub rejected_datasets: u64,
}

impl SplitStats {
    fn record(&mut self, r: &Result<ExprDatasetPair, Rejection>) {
        self.attempted += 1;
        match r {
            Ok(_) => self.emitted += 1,
            Err(Rejection::Canonicalization) => self.rejected_canonicalization += 1,
            Err(Rejection::Tokenization) => self.rejected_tokenization += 1,
            Err(Rejection::Datasets) => self.rejected_datasets += 1,
        }
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            1.0 - self.emitted as f64 / self.attempted as f64
        }
    }
}

/// Base expression ids drawn for a validation or test split: without
/// replacement when the set is large enough, otherwise with replacement.
fn held_out_ids(n_set: usize, count: usize, seed: u64, split: Split) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[seed, split.id(), 0x5e1ec7]));
    if count <= n_set {
        rand::seq::index::sample(&mut rng, n_set, count).into_iter().map(|i| i as u32).collect()
    } else {
        (0..count).map(|_| rng.random_range(0..n_set) as u32).collect()
    }
}

/// Pairs of one split in deterministic order.
pub fn sample_split(
    set: &ExpressionSet,
    n_vars: usize,
    config: &SamplerConfig,
    split: Split,
    stats: &mut SplitStats,
) -> Result<Vec<ExprDatasetPair>, SamplerError> {
    config.validate()?;
    let exprs: Vec<&Expression> = set.iter().map(|c| c.expression()).collect();
    if exprs.is_empty() {
        return Err(SamplerError::EmptySet);
    }
    let vocab = Vocabulary::new(n_vars);
    let mut out = Vec::new();
    let mut push = |id: u32, pair_idx: u64, stats: &mut SplitStats| {
        let seed = pair_seed(config.seed, split, u64::from(id), pair_idx);
        let r = sample_pair(exprs[id as usize], n_vars, config, &vocab, seed);
        stats.record(&r);
        if let Ok(mut p) = r {
            p.base_id = Some(id);
            out.push(p);
        }
    };
    match split {
        Split::Train => {
            for id in 0..exprs.len() as u32 {
                for k in 0..config.pairs_per_expression as u64 {
                    push(id, k, stats);
                }
            }
        }
        Split::Val | Split::Test => {
            let count = if split == Split::Val { config.val_expressions } else { config.test_expressions };
            for (slot, id) in held_out_ids(exprs.len(), count, config.seed, split).into_iter().enumerate() {
                push(id, slot as u64, stats);
            }
        }
    }
    log::info!(
        "{} split: {} of {} pairs emitted (rejection rate {:.3})",
        split.name(),
        stats.emitted,
        stats.attempted,
        stats.rejection_rate()
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shards

pub fn write_shard(path: &Path, pairs: &[ExprDatasetPair], n_points: usize, n_vars: usize) -> Result<(), ArtifactError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SHARD_MAGIC);
    buf.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(n_points as u16).to_le_bytes());
    buf.extend_from_slice(&(n_vars as u16).to_le_bytes());
    for p in pairs {
        assert_eq!(p.n_points(), n_points);
        assert_eq!(p.n_vars, n_vars);
        buf.extend_from_slice(&(p.expression.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.expression.as_bytes());
        for x in &p.inputs {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        for y in &p.targets {
            buf.extend_from_slice(&(*y as f32).to_le_bytes());
        }
        buf.extend_from_slice(&p.seed.to_le_bytes());
    }
    artifact::write_atomic(path, &buf)
}

pub fn read_shard(path: &Path) -> Result<Vec<ExprDatasetPair>, ArtifactError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| ArtifactError::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| ArtifactError::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != SHARD_MAGIC {
        return Err(ArtifactError::format(path, "not a shard file"));
    }
    let version = cur.u32()?;
    if version != SHARD_VERSION {
        return Err(ArtifactError::format(path, format!("unsupported shard version {version}")));
    }
    let n_pairs = cur.u32()? as usize;
    let n_points = cur.u16()? as usize;
    let n_vars = cur.u16()? as usize;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = cur.u32()? as usize;
        let expression = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| ArtifactError::format(path, "expression is not UTF-8"))?
            .to_string();
        let inputs = (0..n_points * n_vars).map(|_| cur.f32().map(f64::from)).collect::<Result<_, _>>()?;
        let targets = (0..n_points).map(|_| cur.f32().map(f64::from)).collect::<Result<_, _>>()?;
        let seed = cur.u64()?;
        pairs.push(ExprDatasetPair { expression, n_vars, inputs, targets, base_id: None, seed });
    }
    if cur.pos != bytes.len() {
        return Err(ArtifactError::format(path, "trailing bytes"));
    }
    Ok(pairs)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        if self.pos + n > self.bytes.len() {
            return Err(ArtifactError::format(self.path, "truncated shard"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ArtifactError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ArtifactError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, ArtifactError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn write_jsonl(path: &Path, pairs: &[ExprDatasetPair]) -> Result<(), ArtifactError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| ArtifactError::io(path, e))?);
    for p in pairs {
        serde_json::to_writer(&mut w, p).map_err(|e| ArtifactError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ArtifactError::io(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))
}

/// Output format of the corpus files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Binary,
    /// Binary shards plus a JSONL mirror of every shard.
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n_vars: usize,
    pub n_points: usize,
    pub train_shards: Vec<String>,
    pub train: SplitStats,
    pub val: SplitStats,
    pub test: SplitStats,
}

/// Samples all three splits and writes `train-NNNNN.syms`, `val.syms`,
/// `test.syms` and `manifest.json` into `dir`.
pub fn build_corpus(
    set: &ExpressionSet,
    n_vars: usize,
    config: &SamplerConfig,
    format: CorpusFormat,
    input_hash: Option<String>,
    dir: &Path,
) -> Result<CorpusSummary, SamplerError> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
    let mut summary = CorpusSummary {
        n_vars,
        n_points: config.n_points,
        train_shards: Vec::new(),
        train: SplitStats::default(),
        val: SplitStats::default(),
        test: SplitStats::default(),
    };
    let mut files = Vec::new();
    let write = |name: &str, pairs: &[ExprDatasetPair], files: &mut Vec<String>| -> Result<(), SamplerError> {
        write_shard(&dir.join(format!("{name}.syms")), pairs, config.n_points, n_vars)?;
        files.push(format!("{name}.syms"));
        if format == CorpusFormat::Jsonl {
            write_jsonl(&dir.join(format!("{name}.jsonl")), pairs)?;
            files.push(format!("{name}.jsonl"));
        }
        Ok(())
    };
    let train = sample_split(set, n_vars, config, Split::Train, &mut summary.train)?;
    for (i, chunk) in train.chunks(config.shard_size).enumerate() {
        let name = format!("train-{i:05}");
        write(&name, chunk, &mut files)?;
        summary.train_shards.push(format!("{name}.syms"));
    }
    let val = sample_split(set, n_vars, config, Split::Val, &mut summary.val)?;
    write("val", &val, &mut files)?;
    let test = sample_split(set, n_vars, config, Split::Test, &mut summary.test)?;
    write("test", &test, &mut files)?;
    let vocab_path = dir.join("vocabulary.json");
    artifact::write_atomic(&vocab_path, Vocabulary::new(n_vars).to_json().as_bytes())?;
    files.push("vocabulary.json".into());

    let mut manifest = Manifest::new("sample-data", config_hash(config));
    manifest.input_hash = input_hash;
    manifest.files = files;
    manifest.details = serde_json::to_value(&summary).expect("summary serializes");
    manifest.write(dir)?;
    Ok(summary)
}

/// Loaded corpus directory.
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub summary: CorpusSummary,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self, ArtifactError> {
        let manifest = Manifest::read(dir)?;
        let summary: CorpusSummary = serde_json::from_value(manifest.details.clone())
            .map_err(|e| ArtifactError::format(&dir.join("manifest.json"), e.to_string()))?;
        Ok(Corpus { dir: dir.to_path_buf(), manifest, summary })
    }

    pub fn split(&self, split: Split) -> Result<Vec<ExprDatasetPair>, ArtifactError> {
        match split {
            Split::Train => {
                let mut out = Vec::new();
                for s in &self.summary.train_shards {
                    out.extend(read_shard(&self.dir.join(s))?);
                }
                Ok(out)
            }
            Split::Val => read_shard(&self.dir.join("val.syms")),
            Split::Test => read_shard(&self.dir.join("test.syms")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_expression_set, GeneratorConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn count_mul_constants(e: &Expression) -> usize {
        match e {
            Expression::Binary(BinaryOp::Mul, l, r) => {
                usize::from(matches!(**l, Expression::Constant(_))) + count_mul_constants(l) + count_mul_constants(r)
            }
            Expression::Binary(_, l, r) => count_mul_constants(l) + count_mul_constants(r),
            Expression::Unary(_, c) => count_mul_constants(c),
            _ => 0,
        }
    }

    #[test]
    fn zero_probability_leaves_base_unchanged() {
        let base: Expression = "sin(x1) + x2".parse().unwrap();
        assert_eq!(insert_constants(&base, 0.0, (-9, 9), &mut rng(1)), base);
    }

    #[test]
    fn probability_one_wraps_every_site() {
        let base: Expression = "sin(x1)".parse().unwrap();
        let e = insert_constants(&base, 1.0, (-9, 9), &mut rng(2));
        // a2 * sin(a1 * x1 + b1) + b2
        let Expression::Binary(BinaryOp::Add, outer, b2) = &e else { panic!("{e}") };
        assert!(matches!(**b2, Expression::Constant(c) if c != 0));
        let Expression::Binary(BinaryOp::Mul, a2, sin) = &**outer else { panic!("{e}") };
        assert!(matches!(**a2, Expression::Constant(c) if c != 0 && c != 1));
        let Expression::Unary(_, inner) = &**sin else { panic!("{e}") };
        let Expression::Binary(BinaryOp::Add, ax, b1) = &**inner else { panic!("{e}") };
        assert!(matches!(**b1, Expression::Constant(c) if c != 0));
        assert!(matches!(&**ax, Expression::Binary(BinaryOp::Mul, a, x)
            if matches!(**a, Expression::Constant(c) if c != 0 && c != 1) && **x == Expression::var(1)));
    }

    #[test]
    fn multiplicative_constant_rate_matches_binomial_mean() {
        // Three sites: x1, x2 and the sin node.
        let base: Expression = "sin(x1) * x2".parse().unwrap();
        let mut r = rng(3);
        let trials = 100_000;
        let total: usize = (0..trials).map(|_| count_mul_constants(&insert_constants(&base, 0.2, (-9, 9), &mut r))).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 0.6).abs() < 0.02, "mean {mean}");
    }

    fn orthogonality_error(q: &DMatrix<f64>) -> f64 {
        let d = q.nrows();
        (q.transpose() * q - DMatrix::<f64>::identity(d, d)).abs().max()
    }

    #[test]
    fn haar_rotations_are_special_orthogonal() {
        assert_eq!(haar_rotation(1, &mut rng(4))[(0, 0)], 1.0);
        let mut r = rng(5);
        for d in 2..6 {
            for _ in 0..20 {
                let q = haar_rotation(d, &mut r);
                assert!(orthogonality_error(&q) <= 1e-10);
                assert!((q.determinant() - 1.0).abs() <= 1e-10);
            }
        }
    }

    /// Kolmogorov–Smirnov statistic of samples against uniform on [0, 1).
    fn ks_uniform(mut u: Vec<f64>) -> f64 {
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        u.iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_dimensional_rotation_angle_is_uniform() {
        let mut r = rng(6);
        let angles: Vec<f64> = (0..10_000)
            .map(|_| {
                let q = haar_rotation(2, &mut r);
                q[(1, 0)].atan2(q[(0, 0)]).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU
            })
            .collect();
        let ks = ks_uniform(angles);
        assert!(ks < 0.02, "KS {ks}");
    }

    #[test]
    fn degenerate_cluster_collapses_to_rotated_centroid() {
        let rot = haar_rotation(2, &mut rng(7));
        let spec = MixtureSpec {
            weights: vec![1.0],
            centroids: vec![vec![0.5, -1.5]],
            scales: vec![vec![0.0, 0.0]],
            shapes: vec![Shape::Gaussian],
            rotation: rot.clone(),
        };
        let xs = sample_from_spec(&spec, 64, &mut rng(8));
        let expected = &rot * nalgebra::DVector::from_vec(vec![0.5, -1.5]);
        for row in xs.chunks(2) {
            assert!((row[0] - expected[0]).abs() < 1e-12 && (row[1] - expected[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_weights_are_a_simplex() {
        let mut r = rng(9);
        for _ in 0..200 {
            let spec = sample_mixture_spec(2, 5, &mut r);
            assert!((1..=5).contains(&spec.weights.len()));
            assert!((spec.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_cluster_covariance_matches_rotated_scales() {
        for shape in [Shape::Gaussian, Shape::Uniform] {
            let rot = haar_rotation(2, &mut rng(10));
            let scales = vec![0.9, 0.3];
            let spec = MixtureSpec {
                weights: vec![1.0],
                centroids: vec![vec![1.0, -2.0]],
                scales: vec![scales.clone()],
                shapes: vec![shape],
                rotation: rot.clone(),
            };
            let n = 100_000;
            let xs = sample_from_spec(&spec, n, &mut rng(11));
            let data = DMatrix::from_row_slice(n, 2, &xs);
            let mean = data.row_mean();
            let centered = DMatrix::from_fn(n, 2, |i, j| data[(i, j)] - mean[j]);
            let cov = centered.transpose() * &centered / (n as f64 - 1.0);
            let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(scales.iter().map(|s| s * s).collect()));
            let expected = &rot * diag * rot.transpose();
            let rel = (cov - &expected).norm() / expected.norm();
            assert!(rel < 0.05, "{shape:?}: relative Frobenius error {rel}");
        }
    }

    fn config(k: usize) -> SamplerConfig {
        SamplerConfig { pairs_per_expression: k, val_expressions: 20, test_expressions: 20, ..SamplerConfig::default() }
    }

    #[test]
    fn total_functions_succeed_first_try() {
        let vocab = Vocabulary::new(2);
        let base: Expression = "x1 + x2".parse().unwrap();
        let cfg = SamplerConfig { retries: 1, ..config(1) };
        for s in 0..50 {
            let p = sample_pair(&base, 2, &cfg, &vocab, s).unwrap();
            assert_eq!(p.n_points(), 64);
        }
    }

    #[test]
    fn domain_violations_are_retried_or_rejected() {
        let vocab = Vocabulary::new(1);
        let base: Expression = "sqrt(x1)".parse().unwrap();
        let cfg = SamplerConfig { constant_probability: 0.0, ..config(1) };
        let mut rejected = 0;
        for s in 0..200 {
            match sample_pair(&base, 1, &cfg, &vocab, s) {
                Ok(p) => assert!(p.inputs.iter().all(|&x| x >= 0.0)),
                Err(r) => {
                    assert_eq!(r, Rejection::Datasets);
                    rejected += 1;
                }
            }
        }
        assert!(rejected > 0);
    }

    fn small_set() -> ExpressionSet {
        build_expression_set(&GeneratorConfig { n_vars: 2, max_depth: 1, threshold: 1000, ..GeneratorConfig::default() })
            .unwrap()
    }

    #[test]
    fn emitted_pairs_reevaluate_exactly() {
        let set = small_set();
        let mut stats = SplitStats::default();
        let pairs = sample_split(&set, 2, &config(20), Split::Train, &mut stats).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            let e = p.parse_expression();
            for i in 0..p.n_points() {
                let y = e.evaluate(p.row(i));
                assert!((y - p.targets[i]).abs() <= 1e-9 * y.abs().max(1e-300));
                assert!(usable(p.targets[i]));
                let back = tokenizer::decode_value(tokenizer::encode_value(p.targets[i]).unwrap());
                assert!((back - p.targets[i]).abs() <= 5e-5 * p.targets[i].abs());
            }
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let set = small_set();
        assert_eq!(set.len(), 15);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = SamplerConfig { shard_size: 7, ..config(2) };
        let a = build_corpus(&set, 2, &cfg, CorpusFormat::Binary, None, dir_a.path()).unwrap();
        build_corpus(&set, 2, &cfg, CorpusFormat::Binary, None, dir_b.path()).unwrap();
        assert_eq!(a.train.attempted, 30);
        assert!(a.train.emitted <= 30);
        assert_eq!(a.val.attempted, 20);
        for f in a.train_shards.iter().chain(["val.syms".to_string(), "test.syms".to_string()].iter()) {
            let x = std::fs::read(dir_a.path().join(f)).unwrap();
            let y = std::fs::read(dir_b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
        let vocab = Vocabulary::from_json(&std::fs::read_to_string(dir_a.path().join("vocabulary.json")).unwrap()).unwrap();
        assert_eq!(vocab, Vocabulary::new(2));
        let corpus = Corpus::open(dir_a.path()).unwrap();
        assert_eq!(corpus.split(Split::Train).unwrap().len() as u64, a.train.emitted);
    }

    #[test]
    fn shard_round_trip_is_f32_exact() {
        let set = small_set();
        let mut stats = SplitStats::default();
        let pairs = sample_split(&set, 2, &config(1), Split::Train, &mut stats).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.syms");
        write_shard(&path, &pairs, 64, 2).unwrap();
        let back = read_shard(&path).unwrap();
        assert_eq!(back.len(), pairs.len());
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.expression, b.expression);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.inputs, b.inputs);
            for (x, y) in a.targets.iter().zip(&b.targets) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_shard(&path).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        use std::collections::HashSet;
        let set = small_set();
        let cfg = config(10);
        let mut seen: HashSet<(String, Vec<u64>)> = HashSet::new();
        let mut seeds = HashSet::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut stats = SplitStats::default();
            for p in sample_split(&set, 2, &cfg, split, &mut stats).unwrap() {
                assert_eq!(Split::of_seed(p.seed), Some(split));
                assert!(seeds.insert(p.seed));
                let key = (p.expression.clone(), p.inputs.iter().map(|x| x.to_bits()).collect());
                assert!(seen.insert(key), "triple collides across splits");
            }
        }
    }

    #[test]
    fn rejection_rate_is_below_half() {
        let set = build_expression_set(&GeneratorConfig { n_vars: 2, max_depth: 3, threshold: 3000, ..GeneratorConfig::default() })
            .unwrap();
        let mut stats = SplitStats::default();
        sample_split(&set, 2, &config(1), Split::Train, &mut stats).unwrap();
        eprintln!("rejection stats: {stats:?}");
        assert!(stats.rejection_rate() < 0.5, "{stats:?}");
    }
}
