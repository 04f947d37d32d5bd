//! Canonicalization by conversion to a normal form and back.
//!
//! An expression is rewritten into a sum of terms `c · m`, where `c` is a
//! rational coefficient and `m` is a product of atoms raised to integer
//! powers. Atoms are variables, `exp(P)`, `sin(P)`, `sqrt(P)` and
//! `Group(S)`: a multi-term sum appearing as a denominator. The fixed rule
//! pipeline is:
//!
//! 1. products are fully distributed over sums and constants folded;
//! 2. `neg(e)` becomes a `-1` coefficient (double negation cancels);
//! 3. like terms are collected, identities (`e+0`, `e·1`, `e/1`, `e-0`)
//!    vanish by construction;
//! 4. atom rules: `exp(a)·exp(b) = exp(a+b)`, `exp(a)^k = exp(k·a)`,
//!    `sqrt(e)^2 = e`, `sin(-e) = -sin(e)` (sign taken from the leading
//!    term of the argument), `exp(0) = 1`, `sin(0) = sqrt(0) = 0`;
//! 5. a sum in a denominator is made monic and free of common monomial
//!    factors, and numerators over it are reduced by polynomial division
//!    against its leading term;
//! 6. optionally, top-level coefficient and offset stripping (`c·f → f`,
//!    `f + c → f`), used only for base expressions;
//! 7. terms are emitted leading-term first under graded lexicographic
//!    order, factors in atom order.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, One, Signed, Zero};
use thiserror::Error;

use super::{BinaryOp, Expression, UnaryOp, DEFAULT_NODE_CAP};

type Coef = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("expression exceeds the node cap of {cap}")]
    CapExceeded { cap: usize },
    #[error("coefficient overflow")]
    Overflow,
    #[error("expression is undefined: {0}")]
    Undefined(&'static str),
}

type Result<T> = std::result::Result<T, CanonError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanonOptions {
    /// Apply top-level coefficient/offset stripping.
    pub strip_affine: bool,
    pub node_cap: usize,
}

impl Default for CanonOptions {
    fn default() -> Self {
        CanonOptions { strip_affine: true, node_cap: DEFAULT_NODE_CAP }
    }
}

impl CanonOptions {
    /// Semantics-preserving canonicalization (no stripping).
    pub fn exact() -> Self {
        CanonOptions { strip_affine: false, ..Default::default() }
    }
}

/// A fixed point of canonicalization together with its rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalForm {
    expression: Expression,
    string: String,
}

impl CanonicalForm {
    pub fn expression(&self) -> &Expression {
        &self.expression
    }

    pub fn as_str(&self) -> &str {
        &self.string
    }

    pub fn into_expression(self) -> Expression {
        self.expression
    }

    pub fn is_constant(&self) -> bool {
        !self.expression.has_variable()
    }
}

impl PartialOrd for CanonicalForm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalForm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.string.cmp(&other.string)
    }
}

impl std::fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.string)
    }
}

/// Canonicalizes with default options (stripping on, cap 512).
pub fn canonicalize(expr: &Expression) -> Result<CanonicalForm> {
    canonicalize_with(expr, CanonOptions::default())
}

pub fn canonicalize_with(expr: &Expression, options: CanonOptions) -> Result<CanonicalForm> {
    let mut ctx = Ctx { budget: options.node_cap.saturating_mul(4) };
    let mut poly = ctx.to_poly(expr)?;
    if options.strip_affine {
        poly = poly.strip_affine()?;
    }
    let expression = poly.to_expression();
    if expression.node_count() > options.node_cap {
        return Err(CanonError::CapExceeded { cap: options.node_cap });
    }
    let string = expression.to_string();
    Ok(CanonicalForm { expression, string })
}

/// Exact symbolic equality: canonical strings (without stripping) match.
/// Expressions that cannot be canonicalized compare unequal.
pub fn symbolic_equal(a: &Expression, b: &Expression) -> bool {
    match (canonicalize_with(a, CanonOptions::exact()), canonicalize_with(b, CanonOptions::exact())) {
        (Ok(ca), Ok(cb)) => ca.string == cb.string,
        (ra, rb) => {
            log::debug!("symbolic_equal: not comparable ({:?}, {:?})", ra.err(), rb.err());
            false
        }
    }
}

// ---------------------------------------------------------------------------
// Normal form

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Atom {
    Var(u8),
    Exp(Poly),
    Sin(Poly),
    Sqrt(Poly),
    Group(Poly),
}

impl Atom {
    fn rank(&self) -> u8 {
        match self {
            Atom::Var(_) => 0,
            Atom::Exp(_) => 1,
            Atom::Sin(_) => 2,
            Atom::Sqrt(_) => 3,
            Atom::Group(_) => 4,
        }
    }

    fn is_group(&self) -> bool {
        matches!(self, Atom::Group(_))
    }
}

impl Ord for Atom {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Atom::Var(a), Atom::Var(b)) => a.cmp(b),
            (Atom::Exp(a), Atom::Exp(b))
            | (Atom::Sin(a), Atom::Sin(b))
            | (Atom::Sqrt(a), Atom::Sqrt(b))
            | (Atom::Group(a), Atom::Group(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Atom {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Product of atoms with non-zero integer exponents, sorted by atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
struct Monomial(Vec<(Atom, i32)>);

impl Monomial {
    fn one() -> Self {
        Monomial(Vec::new())
    }

    fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    fn degree(&self) -> i64 {
        self.0.iter().map(|(_, e)| i64::from(*e)).sum()
    }

    fn exponent(&self, atom: &Atom) -> i32 {
        self.0.binary_search_by(|(a, _)| a.cmp(atom)).map(|i| self.0[i].1).unwrap_or(0)
    }

    fn has_group(&self) -> bool {
        self.0.iter().any(|(a, _)| a.is_group())
    }

    fn split_groups(&self) -> (Monomial, Monomial) {
        let (groups, free): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(a, _)| a.is_group());
        (Monomial(free), Monomial(groups))
    }

    /// Raw product: exponents added, zero exponents dropped. Atom rules are
    /// applied separately by [`Ctx::normalize`].
    fn raw_mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    let e = self.0[i].1 + other.0[j].1;
                    if e != 0 {
                        out.push((self.0[i].0.clone(), e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    fn raw_pow(&self, k: i32) -> Monomial {
        if k == 0 {
            return Monomial::one();
        }
        Monomial(self.0.iter().map(|(a, e)| (a.clone(), e * k)).collect())
    }

    /// Structural divisibility: `self` contains every atom of `divisor` with
    /// at least the same exponent. Only meaningful for non-negative divisors.
    fn divisible_by(&self, divisor: &Monomial) -> bool {
        divisor.0.iter().all(|(a, e)| self.exponent(a) >= *e)
    }

    fn weight(&self) -> usize {
        self.0.iter().map(|(a, e)| e.unsigned_abs() as usize * atom_weight(a)).sum()
    }
}

fn atom_weight(a: &Atom) -> usize {
    match a {
        Atom::Var(_) => 1,
        Atom::Exp(p) | Atom::Sin(p) | Atom::Sqrt(p) | Atom::Group(p) => 1 + p.weight(),
    }
}

/// Graded lexicographic term order; `Less` means "comes first" (leads).
fn term_order(a: &Monomial, b: &Monomial) -> Ordering {
    match b.degree().cmp(&a.degree()) {
        Ordering::Equal => {}
        other => return other,
    }
    let (mut i, mut j) = (0, 0);
    loop {
        match (a.0.get(i), b.0.get(j)) {
            (None, None) => return Ordering::Equal,
            (Some((_, ea)), None) => return 0.cmp(ea),
            (None, Some((_, eb))) => return eb.cmp(&0),
            (Some((aa, ea)), Some((ab, eb))) => match aa.cmp(ab) {
                Ordering::Less => return 0.cmp(ea),
                Ordering::Greater => return eb.cmp(&0),
                Ordering::Equal => {
                    if ea != eb {
                        return eb.cmp(ea);
                    }
                    i += 1;
                    j += 1;
                }
            },
        }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        term_order(self, other)
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sum of terms, leading term first, no zero coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
struct Poly(Vec<(Monomial, Coef)>);

impl Ord for Poly {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for Poly {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn checked_add(a: &Coef, b: &Coef) -> Result<Coef> {
    a.checked_add(b).ok_or(CanonError::Overflow)
}

fn checked_mul(a: &Coef, b: &Coef) -> Result<Coef> {
    a.checked_mul(b).ok_or(CanonError::Overflow)
}

fn checked_recip(a: &Coef) -> Result<Coef> {
    if a.is_zero() {
        return Err(CanonError::Undefined("division by zero"));
    }
    if *a.numer() == i64::MIN {
        return Err(CanonError::Overflow);
    }
    Ok(a.recip())
}

impl Poly {
    fn zero() -> Self {
        Poly(Vec::new())
    }

    fn constant(c: Coef) -> Self {
        if c.is_zero() {
            Poly::zero()
        } else {
            Poly(vec![(Monomial::one(), c)])
        }
    }

    fn term(m: Monomial, c: Coef) -> Self {
        if c.is_zero() {
            Poly::zero()
        } else {
            Poly(vec![(m, c)])
        }
    }

    fn atom(a: Atom) -> Self {
        Poly(vec![(Monomial(vec![(a, 1)]), Coef::one())])
    }

    fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    fn as_constant(&self) -> Option<Coef> {
        match self.0.as_slice() {
            [] => Some(Coef::zero()),
            [(m, c)] if m.is_one() => Some(*c),
            _ => None,
        }
    }

    fn leading_coef(&self) -> Option<Coef> {
        self.0.first().map(|(_, c)| *c)
    }

    fn weight(&self) -> usize {
        self.0.iter().map(|(m, _)| 1 + m.weight()).sum()
    }

    /// Builds a polynomial from unsorted terms, collecting like terms.
    fn from_terms(terms: impl IntoIterator<Item = (Monomial, Coef)>) -> Result<Self> {
        let mut map: BTreeMap<Monomial, Coef> = BTreeMap::new();
        for (m, c) in terms {
            match map.get_mut(&m) {
                Some(existing) => *existing = checked_add(existing, &c)?,
                None => {
                    map.insert(m, c);
                }
            }
        }
        Ok(Poly(map.into_iter().filter(|(_, c)| !c.is_zero()).collect()))
    }

    fn add(&self, other: &Poly) -> Result<Poly> {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    let c = checked_add(&self.0[i].1, &other.0[j].1)?;
                    if !c.is_zero() {
                        out.push((self.0[i].0.clone(), c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Ok(Poly(out))
    }

    fn scale(&self, k: &Coef) -> Result<Poly> {
        if k.is_zero() {
            return Ok(Poly::zero());
        }
        let terms = self.0.iter().map(|(m, c)| Ok((m.clone(), checked_mul(c, k)?))).collect::<Result<_>>()?;
        Ok(Poly(terms))
    }

    fn neg(&self) -> Result<Poly> {
        self.scale(&-Coef::one())
    }

    /// Multiplies every term by a monomial without applying atom rules. Only
    /// valid when the products need no normalization.
    fn raw_mul_monomial(&self, m: &Monomial) -> Poly {
        let mut terms: Vec<(Monomial, Coef)> = self.0.iter().map(|(t, c)| (t.raw_mul(m), *c)).collect();
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        Poly(terms)
    }

    fn sub(&self, other: &Poly) -> Result<Poly> {
        self.add(&other.neg()?)
    }

    /// Top-level coefficient/offset stripping: drop the constant term and
    /// divide by the leading coefficient. Constant polynomials are returned
    /// unchanged.
    fn strip_affine(self) -> Result<Poly> {
        if self.as_constant().is_some() {
            return Ok(self);
        }
        let rest = Poly(self.0.into_iter().filter(|(m, _)| !m.is_one()).collect());
        let lead = rest.leading_coef().expect("non-constant polynomial has a leading term");
        rest.scale(&checked_recip(&lead)?)
    }

    // ------------------------------------------------------------------
    // Conversion back to a tree

    fn to_expression(&self) -> Expression {
        if self.0.is_empty() {
            return Expression::Constant(0);
        }
        // Items in leading-term order; terms over the same sum denominator
        // are rendered as one fraction at the position of their first term.
        let mut items: Vec<(bool, Expression)> = Vec::new();
        let mut seen_groups: Vec<Monomial> = Vec::new();
        for (m, _) in &self.0 {
            if !m.has_group() {
                continue;
            }
            let (_, groups) = m.split_groups();
            if !seen_groups.contains(&groups) {
                seen_groups.push(groups);
            }
        }
        let mut emitted_groups = vec![false; seen_groups.len()];
        for (m, c) in &self.0 {
            if !m.has_group() {
                let negative = c.is_negative();
                items.push((negative, term_expression(m, &c.abs())));
                continue;
            }
            let (_, groups) = m.split_groups();
            let gi = seen_groups.iter().position(|g| *g == groups).expect("group registered");
            if emitted_groups[gi] {
                continue;
            }
            emitted_groups[gi] = true;
            let numerator: Vec<(Monomial, Coef)> = self
                .0
                .iter()
                .filter(|(m2, _)| m2.has_group() && m2.split_groups().1 == groups)
                .map(|(m2, c2)| (m2.split_groups().0, *c2))
                .collect();
            let negative = numerator[0].1.is_negative();
            let numerator = if negative {
                Poly(numerator.into_iter().map(|(m2, c2)| (m2, -c2)).collect())
            } else {
                Poly(numerator)
            };
            let mut e = numerator.to_expression();
            for (atom, exp) in &groups.0 {
                debug_assert!(*exp < 0);
                for _ in 0..exp.unsigned_abs() {
                    e = Expression::binary(BinaryOp::Div, e, atom_expression(atom));
                }
            }
            items.push((negative, e));
        }
        let mut iter = items.into_iter();
        let (first_neg, first) = iter.next().expect("non-empty");
        let mut acc = if first_neg { negate_leading(first) } else { first };
        for (negative, e) in iter {
            let op = if negative { BinaryOp::Sub } else { BinaryOp::Add };
            acc = Expression::binary(op, acc, e);
        }
        acc
    }
}

/// Multiplies the leading coefficient of a rendered positive term by -1.
fn negate_leading(e: Expression) -> Expression {
    match e {
        Expression::Constant(c) => Expression::Constant(-c),
        Expression::Binary(BinaryOp::Mul, l, r) => Expression::Binary(BinaryOp::Mul, Box::new(negate_leading(*l)), r),
        Expression::Binary(BinaryOp::Div, l, r) => Expression::Binary(BinaryOp::Div, Box::new(negate_leading(*l)), r),
        other => Expression::binary(BinaryOp::Mul, Expression::Constant(-1), other),
    }
}

fn product(factors: Vec<Expression>) -> Option<Expression> {
    factors.into_iter().reduce(|acc, f| Expression::binary(BinaryOp::Mul, acc, f))
}

/// Renders `c · m` for a positive coefficient and a group-free monomial.
fn term_expression(m: &Monomial, c: &Coef) -> Expression {
    let mut num = Vec::new();
    let mut den = Vec::new();
    if *c.numer() != 1 || m.0.iter().all(|(_, e)| *e < 0) {
        num.push(Expression::Constant(*c.numer()));
    }
    if *c.denom() != 1 {
        den.push(Expression::Constant(*c.denom()));
    }
    for (atom, e) in &m.0 {
        let target = if *e > 0 { &mut num } else { &mut den };
        for _ in 0..e.unsigned_abs() {
            target.push(atom_expression(atom));
        }
    }
    let num = product(num).expect("numerator non-empty");
    match product(den) {
        Some(d) => Expression::binary(BinaryOp::Div, num, d),
        None => num,
    }
}

fn atom_expression(atom: &Atom) -> Expression {
    match atom {
        Atom::Var(i) => Expression::Variable(*i),
        Atom::Exp(p) => Expression::unary(UnaryOp::Exp, p.to_expression()),
        Atom::Sin(p) => Expression::unary(UnaryOp::Sin, p.to_expression()),
        Atom::Sqrt(p) => Expression::unary(UnaryOp::Sqrt, p.to_expression()),
        Atom::Group(p) => p.to_expression(),
    }
}

// ---------------------------------------------------------------------------
// Construction

const DIVISION_STEP_LIMIT: usize = 256;

struct Ctx {
    budget: usize,
}

impl Ctx {
    fn check(&self, p: &Poly) -> Result<()> {
        if p.weight() > self.budget {
            Err(CanonError::CapExceeded { cap: self.budget / 4 })
        } else {
            Ok(())
        }
    }

    fn to_poly(&mut self, e: &Expression) -> Result<Poly> {
        let p = match e {
            Expression::Variable(i) => Poly::atom(Atom::Var(*i)),
            Expression::Constant(c) => Poly::constant(Coef::from_integer(*c)),
            Expression::Unary(op, child) => {
                let inner = self.to_poly(child)?;
                match op {
                    UnaryOp::Neg => inner.neg()?,
                    UnaryOp::Exp => self.exp(inner)?,
                    UnaryOp::Sin => self.sin(inner)?,
                    UnaryOp::Sqrt => self.sqrt(inner)?,
                }
            }
            Expression::Binary(op, l, r) => {
                let a = self.to_poly(l)?;
                let b = self.to_poly(r)?;
                let combined = match op {
                    BinaryOp::Add => a.add(&b)?,
                    BinaryOp::Sub => a.sub(&b)?,
                    BinaryOp::Mul => self.mul(&a, &b)?,
                    BinaryOp::Div => {
                        let inv = self.inverse(&b)?;
                        self.mul(&a, &inv)?
                    }
                };
                self.reduce_fractions(combined)?
            }
        };
        self.check(&p)?;
        Ok(p)
    }

    fn exp(&mut self, arg: Poly) -> Result<Poly> {
        if arg.is_zero() {
            return Ok(Poly::constant(Coef::one()));
        }
        Ok(Poly::atom(Atom::Exp(arg)))
    }

    fn sin(&mut self, arg: Poly) -> Result<Poly> {
        match arg.leading_coef() {
            None => Ok(Poly::zero()),
            Some(c) if c.is_negative() => Poly::atom(Atom::Sin(arg.neg()?)).neg(),
            Some(_) => Ok(Poly::atom(Atom::Sin(arg))),
        }
    }

    fn sqrt(&mut self, arg: Poly) -> Result<Poly> {
        if let Some(c) = arg.as_constant() {
            if c.is_zero() {
                return Ok(Poly::zero());
            }
            if c.is_negative() {
                return Err(CanonError::Undefined("square root of a negative constant"));
            }
            if let (Some(n), Some(d)) = (exact_isqrt(*c.numer()), exact_isqrt(*c.denom())) {
                return Ok(Poly::constant(Coef::new(n, d)));
            }
        }
        Ok(Poly::atom(Atom::Sqrt(arg)))
    }

    fn mul(&mut self, a: &Poly, b: &Poly) -> Result<Poly> {
        if a.is_zero() || b.is_zero() {
            return Ok(Poly::zero());
        }
        if a.0.len().saturating_mul(b.0.len()) > self.budget {
            return Err(CanonError::CapExceeded { cap: self.budget / 4 });
        }
        let mut simple = Vec::with_capacity(a.0.len() * b.0.len());
        let mut complex = Vec::new();
        for (ma, ca) in &a.0 {
            for (mb, cb) in &b.0 {
                let c = checked_mul(ca, cb)?;
                let m = ma.raw_mul(mb);
                if needs_normalization(&m) {
                    complex.push((m, c));
                } else {
                    simple.push((m, c));
                }
            }
        }
        let mut out = Poly::from_terms(simple)?;
        for (m, c) in complex {
            let p = self.normalize(m)?.scale(&c)?;
            out = out.add(&p)?;
            self.check(&out)?;
        }
        self.check(&out)?;
        Ok(out)
    }

    /// Applies the atom rules to a raw monomial, returning a polynomial.
    fn normalize(&mut self, m: Monomial) -> Result<Poly> {
        let mut free = Vec::new();
        let mut exp_arg = Poly::zero();
        let mut has_exp = false;
        let mut expansions: Vec<Poly> = Vec::new();
        for (atom, e) in m.0 {
            match atom {
                Atom::Exp(arg) => {
                    has_exp = true;
                    exp_arg = exp_arg.add(&arg.scale(&Coef::from_integer(i64::from(e)))?)?;
                }
                Atom::Sqrt(arg) if e != 1 => {
                    let q = e.div_euclid(2);
                    let r = e.rem_euclid(2);
                    if r == 1 {
                        free.push((Atom::Sqrt(arg.clone()), 1));
                    }
                    expansions.push(self.power(&arg, q)?);
                }
                Atom::Group(s) if e > 0 => {
                    expansions.push(self.power(&s, e)?);
                }
                other => free.push((other, e)),
            }
        }
        if has_exp && !exp_arg.is_zero() {
            free.push((Atom::Exp(exp_arg), 1));
            free.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let mut out = Poly::term(Monomial(free), Coef::one());
        for p in expansions {
            out = self.mul(&out, &p)?;
        }
        Ok(out)
    }

    fn power(&mut self, p: &Poly, k: i32) -> Result<Poly> {
        let base = if k < 0 { self.inverse(p)? } else { p.clone() };
        let mut out = Poly::constant(Coef::one());
        for _ in 0..k.unsigned_abs() {
            out = self.mul(&out, &base)?;
        }
        Ok(out)
    }

    fn inverse(&mut self, q: &Poly) -> Result<Poly> {
        if let [(m, c)] = q.0.as_slice() {
            let inv = self.normalize(m.raw_pow(-1))?;
            return inv.scale(&checked_recip(c)?);
        }
        if q.is_zero() {
            return Err(CanonError::Undefined("division by zero"));
        }
        // q = n / d, so 1/q = d / n with n = c · g · s, s monic and free of
        // monomial content.
        let (n, d) = self.as_fraction(q)?;
        let d_poly = self.normalize(d)?;
        let g = content(&n);
        let s = if g.is_one() { n } else { n.raw_mul_monomial(&g.raw_pow(-1)) };
        let inv = if s.0.len() == 1 {
            let (m, c) = &s.0[0];
            self.normalize(m.raw_mul(&g).raw_pow(-1))?.scale(&checked_recip(c)?)?
        } else {
            let lead = s.leading_coef().expect("multi-term");
            let s = s.scale(&checked_recip(&lead)?)?;
            let m = g.raw_pow(-1).raw_mul(&Monomial(vec![(Atom::Group(s), -1)]));
            self.normalize(m)?.scale(&checked_recip(&lead)?)?
        };
        self.mul(&d_poly, &inv)
    }

    /// Writes `p` as `n / d` with `n` free of negative exponents and `d` a
    /// product of atom and group powers (returned with positive exponents),
    /// cancelling every group that divides `n` exactly and the monomial
    /// content shared by `n` and `d`.
    fn as_fraction(&mut self, p: &Poly) -> Result<(Poly, Monomial)> {
        let mut d: Vec<(Atom, i32)> = Vec::new();
        for (m, _) in &p.0 {
            for (atom, e) in &m.0 {
                if *e < 0 {
                    match d.iter_mut().find(|(a, _)| a == atom) {
                        Some((_, k)) => *k = (*k).max(-e),
                        None => d.push((atom.clone(), -e)),
                    }
                }
            }
        }
        if d.is_empty() {
            return Ok((p.clone(), Monomial::one()));
        }
        d.sort_by(|a, b| a.0.cmp(&b.0));
        let mut n = self.mul(p, &Poly::term(Monomial(d.clone()), Coef::one()))?;
        for (atom, k) in d.iter_mut() {
            match atom {
                Atom::Group(s) => {
                    while *k > 0 {
                        let (quotient, remainder) = self.divide(&n, s)?;
                        if !remainder.is_zero() {
                            break;
                        }
                        n = quotient;
                        *k -= 1;
                    }
                }
                _ => {
                    let min = n.0.iter().map(|(m, _)| m.exponent(atom)).min().unwrap_or(0);
                    let cancel = min.min(*k);
                    if cancel > 0 {
                        n = n.raw_mul_monomial(&Monomial(vec![(atom.clone(), -cancel)]));
                        *k -= cancel;
                    }
                }
            }
        }
        d.retain(|(_, k)| *k > 0);
        Ok((n, Monomial(d)))
    }

    /// Brings `p` to the form `q + r / d` with `d` the reduced common
    /// denominator and `r` reduced modulo the leading term of `d`. The pair
    /// `(q, r)` is unique for a given `n / d`.
    fn reduce_fractions(&mut self, p: Poly) -> Result<Poly> {
        if !p.0.iter().any(|(m, _)| m.0.iter().any(|(_, e)| *e < 0)) {
            return Ok(p);
        }
        let (n, d) = self.as_fraction(&p)?;
        if d.is_one() {
            return Ok(n);
        }
        let d_poly = self.normalize(d.clone())?;
        let (quotient, remainder) = self.divide(&n, &d_poly)?;
        let fraction = remainder.raw_mul_monomial(&d.raw_pow(-1));
        let out = quotient.add(&fraction)?;
        self.check(&out)?;
        Ok(out)
    }

    /// Multivariate division of `n` by `s` using its leading term.
    /// Returns `(quotient, remainder)`.
    fn divide(&mut self, n: &Poly, s: &Poly) -> Result<(Poly, Poly)> {
        let (lead, lead_coef) = &s.0[0];
        let lead_inv = lead.raw_pow(-1);
        let coef_inv = checked_recip(lead_coef)?;
        let mut rest = n.clone();
        let mut quotient = Poly::zero();
        let mut remainder = Poly::zero();
        let mut steps = 0;
        while let Some((m, c)) = rest.0.first().cloned() {
            steps += 1;
            if steps > DIVISION_STEP_LIMIT {
                return Err(CanonError::CapExceeded { cap: self.budget / 4 });
            }
            if m.divisible_by(lead) {
                let t = Poly::term(m.raw_mul(&lead_inv), checked_mul(&c, &coef_inv)?);
                quotient = quotient.add(&t)?;
                let ts = self.mul(&t, s)?;
                rest = rest.sub(&ts)?;
            } else {
                let t = Poly::term(m, c);
                remainder = remainder.add(&t)?;
                rest = rest.sub(&t)?;
            }
            self.check(&rest)?;
        }
        Ok((quotient, remainder))
    }
}

/// Monomial of minimum exponents over the terms of a polynomial without
/// negative exponents. Exp atoms only count when shared by every term.
fn content(p: &Poly) -> Monomial {
    let Some((first, _)) = p.0.first() else { return Monomial::one() };
    let mut g = Vec::new();
    for (atom, _) in &first.0 {
        let min = p.0.iter().map(|(m, _)| m.exponent(atom)).min().unwrap_or(0);
        if min > 0 {
            g.push((atom.clone(), min));
        }
    }
    Monomial(g)
}

fn needs_normalization(m: &Monomial) -> bool {
    let mut exps = 0;
    for (a, e) in &m.0 {
        match a {
            Atom::Exp(_) => {
                exps += 1;
                if *e != 1 {
                    return true;
                }
            }
            Atom::Sqrt(_) if *e != 1 => return true,
            Atom::Group(_) if *e > 0 => return true,
            _ => {}
        }
    }
    exps > 1
}

fn exact_isqrt(v: i64) -> Option<i64> {
    if v < 0 {
        return None;
    }
    let r = (v as f64).sqrt().round() as i64;
    (r.checked_mul(r) == Some(v)).then_some(r)
}
