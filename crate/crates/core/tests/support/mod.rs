//! Brute-force enumeration of expression levels that identifies
//! expressions numerically instead of symbolically.
//!
//! Every candidate is evaluated at a handful of complex points, where sqrt,
//! division and exp are defined almost everywhere. Two expressions are in
//! the same class when one is an affine image `a·f + b` of the other, which
//! is exactly the equivalence that coefficient/offset stripping induces.

#![allow(dead_code)]

use symscale_core::expr::{BinaryOp, Expression, UnaryOp};
use symscale_core::generator::{build_expression_set, GeneratorConfig};

#[derive(Clone, Copy, Debug)]
pub struct C(pub f64, pub f64);

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
    fn exp(self) -> C {
        let r = self.0.exp();
        C(r * self.1.cos(), r * self.1.sin())
    }
    fn sin(self) -> C {
        C(self.0.sin() * self.1.cosh(), self.0.cos() * self.1.sinh())
    }
    fn sqrt(self) -> C {
        // Principal branch.
        let r = (self.0 * self.0 + self.1 * self.1).sqrt();
        let re = ((r + self.0) / 2.0).sqrt();
        let im = ((r - self.0) / 2.0).sqrt().copysign(self.1);
        C(re, im)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

pub fn eval(e: &Expression, p: &[C]) -> C {
    match e {
        Expression::Variable(i) => p[usize::from(*i) - 1],
        Expression::Constant(c) => C(*c as f64, 0.0),
        Expression::Unary(op, a) => {
            let a = eval(a, p);
            match op {
                UnaryOp::Exp => a.exp(),
                UnaryOp::Sin => a.sin(),
                UnaryOp::Sqrt => a.sqrt(),
                UnaryOp::Neg => C(-a.0, -a.1),
            }
        }
        Expression::Binary(op, a, b) => {
            let (a, b) = (eval(a, p), eval(b, p));
            match op {
                BinaryOp::Add => a.add(b),
                BinaryOp::Sub => a.sub(b),
                BinaryOp::Mul => a.mul(b),
                BinaryOp::Div => a.div(b),
            }
        }
    }
}

pub const N_POINTS: usize = 7;

pub fn points() -> Vec<Vec<C>> {
    // Fixed generic points. Several put both variables in the left half
    // plane so that sqrt(x1·x2) and sqrt(x1)·sqrt(x2) land on different
    // branches, as they do for negative real inputs.
    let raw = [
        [(0.731, 0.412), (1.213, -0.377)],
        [(-0.517, 0.853), (0.642, 0.291)],
        [(-0.903, 0.611), (-0.297, 0.813)],
        [(-0.711, -0.487), (-0.389, -0.917)],
        [(-0.823, 0.447), (-0.589, -0.703)],
        [(0.583, 1.071), (-0.262, -1.007)],
        [(1.003, 0.617), (0.851, 0.939)],
    ];
    raw.iter().map(|r| r.iter().map(|&(a, b)| C(a, b)).collect()).collect()
}

/// Affine-invariant fingerprint: `(f_k - f_0) / (f_1 - f_0)` for k ≥ 2.
/// `None` for constants and for values that are not finite.
pub fn fingerprint(e: &Expression, pts: &[Vec<C>]) -> Option<Vec<C>> {
    let v: Vec<C> = pts.iter().map(|p| eval(e, p)).collect();
    if v.iter().any(|z| !z.0.is_finite() || !z.1.is_finite()) {
        return None;
    }
    let scale = v.iter().map(|z| z.abs()).fold(1.0, f64::max);
    let d1 = v[1].sub(v[0]);
    let spread = v.iter().map(|z| z.sub(v[0]).abs()).fold(0.0, f64::max);
    if spread <= 1e-9 * scale || d1.abs() <= 1e-9 * scale {
        return None;
    }
    Some(v[2..].iter().map(|z| z.sub(v[0]).div(d1)).collect())
}

pub fn same(a: &[C], b: &[C]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.sub(*y).abs() <= 1e-7 * (1.0 + x.abs().max(y.abs())))
}

pub fn class_of(classes: &[Vec<C>], fp: &[C]) -> Option<usize> {
    classes.iter().position(|c| same(c, fp))
}

/// Brute-force levels with numeric dedup; returns one representative per
/// class for each level.
pub fn oracle_levels(n_vars: u8, depth: usize, unary: &[UnaryOp], binary: &[BinaryOp]) -> Vec<Vec<Expression>> {
    let pts = points();
    assert_eq!(pts.len(), N_POINTS);
    let mut classes: Vec<Vec<C>> = Vec::new();
    let level0: Vec<Expression> = (1..=n_vars).map(Expression::var).collect();
    for e in &level0 {
        classes.push(fingerprint(e, &pts).unwrap());
    }
    let mut levels = vec![level0];
    for _ in 1..=depth {
        let prev = levels.last().unwrap().clone();
        let lower: Vec<Expression> = levels.iter().flatten().cloned().collect();
        let mut candidates = Vec::new();
        for op in unary {
            for a in &prev {
                candidates.push(Expression::unary(*op, a.clone()));
            }
        }
        for op in binary {
            for a in &prev {
                for b in &lower {
                    candidates.push(Expression::binary(*op, a.clone(), b.clone()));
                    candidates.push(Expression::binary(*op, b.clone(), a.clone()));
                }
            }
        }
        let mut next = Vec::new();
        for c in candidates {
            if let Some(fp) = fingerprint(&c, &pts) {
                if class_of(&classes, &fp).is_none() {
                    classes.push(fp);
                    next.push(c);
                }
            }
        }
        levels.push(next);
    }
    levels
}

/// Panics unless the generator matches the oracle level by level and
/// member by member; returns the total size.
pub fn check_against_oracle(n_vars: u8, depth: usize) -> usize {
    let config = GeneratorConfig { n_vars, max_depth: depth, threshold: usize::MAX / 2, ..GeneratorConfig::default() };
    let set = build_expression_set(&config).unwrap();
    let oracle = oracle_levels(n_vars, depth, &UnaryOp::ALL, &BinaryOp::ALL);
    let pts = points();
    let oracle_fps: Vec<Vec<C>> = oracle.iter().flatten().map(|e| fingerprint(e, &pts).unwrap()).collect();

    for (level, (mine, theirs)) in set.levels().iter().zip(&oracle).enumerate() {
        assert_eq!(mine.len(), theirs.len(), "level {level} size");
    }
    let mut hit = vec![false; oracle_fps.len()];
    for cf in set.iter() {
        let fp = fingerprint(cf.expression(), &pts).unwrap_or_else(|| panic!("{cf} has no fingerprint"));
        let k = class_of(&oracle_fps, &fp).unwrap_or_else(|| panic!("{cf} matches no oracle class"));
        assert!(!hit[k], "{cf} duplicates an earlier member");
        hit[k] = true;
    }
    assert!(hit.iter().all(|&h| h));
    hit.len()
}
