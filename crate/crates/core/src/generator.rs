//! Level-wise enumeration of the base expression set.
//!
//! Level `i` is built from every unary operator applied to level `i - 1` and
//! every binary operator applied, in both argument orders, to a level `i - 1`
//! expression and any expression of a lower level. Candidates are
//! canonicalized with coefficient/offset stripping and deduplicated on their
//! canonical strings.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{canonicalize_with, BinaryOp, CanonError, CanonOptions, CanonicalForm, Expression, UnaryOp};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("threshold {threshold} is smaller than the {n_vars} level-0 variables")]
    ThresholdTooSmall { threshold: usize, n_vars: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("level 0 is fixed to the input variables")]
    LevelZero,
    #[error("level {requested} requested but only levels 0..{available} exist")]
    MissingLevel { requested: usize, available: usize },
    #[error("malformed expressions file at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_vars: u8,
    pub max_depth: usize,
    pub threshold: usize,
    pub seed: u64,
    #[serde(default = "all_unary")]
    pub unary_ops: Vec<UnaryOp>,
    #[serde(default = "all_binary")]
    pub binary_ops: Vec<BinaryOp>,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
}

fn all_unary() -> Vec<UnaryOp> {
    UnaryOp::ALL.to_vec()
}

fn all_binary() -> Vec<BinaryOp> {
    BinaryOp::ALL.to_vec()
}

fn default_node_cap() -> usize {
    crate::expr::DEFAULT_NODE_CAP
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_vars: 2,
            max_depth: 3,
            threshold: 100_000,
            seed: 0,
            unary_ops: all_unary(),
            binary_ops: all_binary(),
            node_cap: default_node_cap(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.n_vars == 0 {
            return Err(GeneratorError::InvalidConfig("n_vars must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(GeneratorError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.threshold < usize::from(self.n_vars) {
            return Err(GeneratorError::ThresholdTooSmall {
                threshold: self.threshold,
                n_vars: usize::from(self.n_vars),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub candidates: u64,
    pub duplicates: u64,
    pub constants_dropped: u64,
    pub cap_dropped: u64,
    pub undefined_dropped: u64,
    /// Levels whose candidate stream was exhausted.
    pub complete_levels: Vec<usize>,
    pub level_sizes: Vec<usize>,
}

/// One entry of `expressions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub canonical_string: String,
    /// Depth of the canonical tree.
    pub depth: usize,
    /// Construction level the expression was first found at.
    pub level_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExpressionSet {
    levels: Vec<Vec<CanonicalForm>>,
    index: HashSet<String>,
    pub stats: GenerationStats,
}

impl ExpressionSet {
    /// A set holding only level 0, `x1..xn`.
    pub fn with_variables(n_vars: u8) -> Self {
        let level0: Vec<CanonicalForm> = (1..=n_vars)
            .map(|i| canonicalize_with(&Expression::var(i), CanonOptions::default()).expect("variables canonicalize"))
            .collect();
        let index = level0.iter().map(|c| c.as_str().to_string()).collect();
        ExpressionSet {
            levels: vec![level0],
            index,
            stats: GenerationStats { level_sizes: vec![usize::from(n_vars)], complete_levels: vec![0], ..Default::default() },
        }
    }

    pub fn levels(&self) -> &[Vec<CanonicalForm>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.index.contains(canonical)
    }

    /// All expressions, level by level.
    pub fn iter(&self) -> impl Iterator<Item = &CanonicalForm> {
        self.levels.iter().flatten()
    }

    pub fn records(&self) -> Vec<ExpressionRecord> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(level, forms)| {
                forms.iter().map(move |c| ExpressionRecord {
                    canonical_string: c.as_str().to_string(),
                    depth: c.expression().depth(),
                    level_index: level,
                })
            })
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), GeneratorError> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_stats(&self, path: &Path) -> Result<(), GeneratorError> {
        let text = serde_json::to_string_pretty(&self.stats).map_err(std::io::Error::from)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Loads `expressions.jsonl`; the strings are re-canonicalized and must be
    /// fixed points.
    pub fn read_jsonl(path: &Path) -> Result<Self, GeneratorError> {
        let reader = BufReader::new(File::open(path)?);
        let mut set = ExpressionSet::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| GeneratorError::Format { line: i + 1, message };
            let rec: ExpressionRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
            let expr = Expression::parse(&rec.canonical_string).map_err(|e| fail(e.to_string()))?;
            let cf = canonicalize_with(&expr, CanonOptions::default()).map_err(|e| fail(e.to_string()))?;
            if cf.as_str() != rec.canonical_string {
                return Err(fail(format!("'{}' is not in canonical form", rec.canonical_string)));
            }
            while set.levels.len() <= rec.level_index {
                set.levels.push(Vec::new());
            }
            if !set.index.insert(rec.canonical_string) {
                return Err(fail("duplicate expression".into()));
            }
            set.levels[rec.level_index].push(cf);
        }
        set.stats.level_sizes = set.levels.iter().map(Vec::len).collect();
        Ok(set)
    }
}

/// Candidate space of one level: unary applications, then binary ones.
struct CandidateSpace<'a> {
    unary: &'a [UnaryOp],
    binary: &'a [BinaryOp],
    prev: &'a [CanonicalForm],
    lower: Vec<&'a CanonicalForm>,
}

impl<'a> CandidateSpace<'a> {
    fn new(set: &'a ExpressionSet, level: usize, unary: &'a [UnaryOp], binary: &'a [BinaryOp]) -> Self {
        let prev = &set.levels[level - 1];
        let lower = set.levels[..level].iter().flatten().collect();
        CandidateSpace { unary, binary, prev, lower }
    }

    fn unary_count(&self) -> u64 {
        (self.unary.len() * self.prev.len()) as u64
    }

    fn len(&self) -> u64 {
        self.unary_count() + (self.binary.len() * 2 * self.prev.len() * self.lower.len()) as u64
    }

    fn get(&self, index: u64) -> Expression {
        let u = self.unary_count();
        if index < u {
            let n = self.prev.len() as u64;
            let op = self.unary[(index / n) as usize];
            let child = self.prev[(index % n) as usize].expression().clone();
            return Expression::unary(op, child);
        }
        let mut r = index - u;
        let nl = self.lower.len() as u64;
        let np = self.prev.len() as u64;
        let b = (r % nl) as usize;
        r /= nl;
        let a = (r % np) as usize;
        r /= np;
        let swapped = r % 2 == 1;
        let op = self.binary[(r / 2) as usize];
        let (x, y) = (self.prev[a].expression().clone(), self.lower[b].expression().clone());
        if swapped {
            Expression::binary(op, y, x)
        } else {
            Expression::binary(op, x, y)
        }
    }
}

/// Uniform sampling without replacement from `0..n` by a Fisher–Yates shuffle
/// whose swaps are kept in a sparse map, so memory grows with draws only.
struct LazyShuffle {
    n: u64,
    drawn: u64,
    swaps: HashMap<u64, u64>,
}

impl LazyShuffle {
    fn new(n: u64) -> Self {
        LazyShuffle { n, drawn: 0, swaps: HashMap::new() }
    }

    fn next(&mut self, rng: &mut impl Rng) -> Option<u64> {
        if self.drawn == self.n {
            return None;
        }
        let i = self.drawn;
        let j = rng.random_range(i..self.n);
        let vj = self.swaps.get(&j).copied().unwrap_or(j);
        let vi = self.swaps.remove(&i).unwrap_or(i);
        if j != i {
            self.swaps.insert(j, vi);
        }
        self.drawn += 1;
        Some(vj)
    }
}

enum Verdict {
    New(CanonicalForm),
    Duplicate,
    Constant,
    Cap,
    Undefined,
}

fn classify(
    candidate: &Expression,
    options: CanonOptions,
    index: &HashSet<String>,
    pending: &HashSet<String>,
) -> Verdict {
    match canonicalize_with(candidate, options) {
        Ok(cf) if cf.is_constant() => Verdict::Constant,
        Ok(cf) if index.contains(cf.as_str()) || pending.contains(cf.as_str()) => Verdict::Duplicate,
        Ok(cf) => Verdict::New(cf),
        Err(CanonError::CapExceeded { .. }) | Err(CanonError::Overflow) => Verdict::Cap,
        Err(CanonError::Undefined(_)) => Verdict::Undefined,
    }
}

/// Generates level `level` from the levels already in `set`, consuming the
/// candidate stream in a seeded random order until `limit` new expressions
/// are found or the stream is exhausted. Returns the new expressions sorted
/// by canonical string and whether the level is complete.
pub fn generate_level(
    set: &ExpressionSet,
    level: usize,
    config: &GeneratorConfig,
    limit: usize,
    rng: &mut impl Rng,
    stats: &mut GenerationStats,
) -> Result<(Vec<CanonicalForm>, bool), GeneratorError> {
    if level == 0 {
        return Err(GeneratorError::LevelZero);
    }
    if level > set.levels.len() {
        return Err(GeneratorError::MissingLevel { requested: level, available: set.levels.len() });
    }
    let options = CanonOptions { strip_affine: true, node_cap: config.node_cap };
    let space = CandidateSpace::new(set, level, &config.unary_ops, &config.binary_ops);
    let mut order = LazyShuffle::new(space.len());
    let mut found: Vec<CanonicalForm> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut complete = true;
    while found.len() < limit || limit == usize::MAX {
        let Some(i) = order.next(rng) else { break };
        stats.candidates += 1;
        match classify(&space.get(i), options, &set.index, &seen) {
            Verdict::New(cf) => {
                seen.insert(cf.as_str().to_string());
                found.push(cf);
            }
            Verdict::Duplicate => stats.duplicates += 1,
            Verdict::Constant => stats.constants_dropped += 1,
            Verdict::Cap => stats.cap_dropped += 1,
            Verdict::Undefined => stats.undefined_dropped += 1,
        }
    }
    if found.len() >= limit && order.drawn < order.n {
        complete = false;
    }
    found.sort();
    log::debug!("level {level}: {} new of {} candidates (complete: {complete})", found.len(), order.drawn);
    Ok((found, complete))
}

/// Builds `E` level by level until `threshold` expressions are collected or
/// `max_depth` is reached.
pub fn build_expression_set(config: &GeneratorConfig) -> Result<ExpressionSet, GeneratorError> {
    config.validate()?;
    let mut set = ExpressionSet::with_variables(config.n_vars);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for level in 1..=config.max_depth {
        let remaining = config.threshold - set.len();
        if remaining == 0 {
            break;
        }
        let mut stats = std::mem::take(&mut set.stats);
        let (found, complete) = generate_level(&set, level, config, remaining, &mut rng, &mut stats)?;
        set.stats = stats;
        for cf in &found {
            set.index.insert(cf.as_str().to_string());
        }
        set.stats.level_sizes.push(found.len());
        if complete {
            set.stats.complete_levels.push(level);
        }
        log::info!("level {level}: {} expressions (total {})", found.len(), set.len() + found.len());
        set.levels.push(found);
        if !complete {
            break;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n_vars: u8, max_depth: usize, threshold: usize) -> GeneratorConfig {
        GeneratorConfig { n_vars, max_depth, threshold, ..GeneratorConfig::default() }
    }

    fn strings(set: &ExpressionSet) -> Vec<String> {
        set.iter().map(|c| c.as_str().to_string()).collect()
    }

    #[test]
    fn two_variables_depth_one() {
        let set = build_expression_set(&config(2, 1, 1000)).unwrap();
        assert_eq!(set.levels()[1].len(), 13);
        assert_eq!(set.len(), 15);
        let mut expected = vec![
            "exp(x1)", "exp(x2)", "sin(x1)", "sin(x2)", "sqrt(x1)", "sqrt(x2)", "x1 + x2", "x1 - x2", "x1 * x2",
            "x1 / x2", "x2 / x1", "x1 * x1", "x2 * x2",
        ];
        expected.sort();
        let mut got: Vec<&str> = set.levels()[1].iter().map(|c| c.as_str()).collect();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn single_variable_addition_only_is_empty() {
        let cfg = GeneratorConfig { unary_ops: vec![], binary_ops: vec![BinaryOp::Add], ..config(1, 1, 100) };
        let set = build_expression_set(&cfg).unwrap();
        assert!(set.levels()[1].is_empty());
        assert_eq!(set.stats.duplicates, 2);
    }

    #[test]
    fn threshold_fill() {
        let set = build_expression_set(&config(2, 1, 10)).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.levels()[1].len(), 8);
        let full = build_expression_set(&config(2, 1, 1000)).unwrap();
        for c in set.levels()[1].iter() {
            assert!(full.contains(c.as_str()));
        }
    }

    #[test]
    fn threshold_below_variables_is_an_error() {
        assert!(matches!(build_expression_set(&config(2, 1, 1)), Err(GeneratorError::ThresholdTooSmall { .. })));
    }

    #[test]
    fn level_zero_is_fixed() {
        let set = ExpressionSet::with_variables(2);
        let mut stats = GenerationStats::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = generate_level(&set, 0, &config(2, 1, 10), 10, &mut rng, &mut stats);
        assert!(matches!(r, Err(GeneratorError::LevelZero)));
    }

    #[test]
    fn deterministic_and_seed_sensitive_when_sampling() {
        let a = build_expression_set(&config(2, 2, 200)).unwrap();
        let b = build_expression_set(&config(2, 2, 200)).unwrap();
        assert_eq!(strings(&a), strings(&b));
        let c = build_expression_set(&GeneratorConfig { seed: 9, ..config(2, 2, 200) }).unwrap();
        assert_eq!(c.len(), 200);
        assert_ne!(strings(&a), strings(&c));
    }

    #[test]
    fn complete_levels_ignore_the_seed() {
        let a = build_expression_set(&config(2, 2, 1_000_000)).unwrap();
        let b = build_expression_set(&GeneratorConfig { seed: 5, ..config(2, 2, 1_000_000) }).unwrap();
        assert_eq!(strings(&a), strings(&b));
        assert_eq!(a.stats.complete_levels, vec![0, 1, 2]);
    }

    #[test]
    fn lazy_shuffle_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = LazyShuffle::new(1000);
        let mut v: Vec<u64> = std::iter::from_fn(|| s.next(&mut rng)).collect();
        assert_eq!(v.len(), 1000);
        v.sort();
        assert!(v.iter().enumerate().all(|(i, &x)| i as u64 == x));
    }

    #[test]
    fn jsonl_round_trip() {
        let set = build_expression_set(&config(2, 2, 300)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expressions.jsonl");
        set.write_jsonl(&path).unwrap();
        let back = ExpressionSet::read_jsonl(&path).unwrap();
        assert_eq!(strings(&back), strings(&set));
        assert_eq!(back.records(), set.records());
    }
}
