//! Expression trees over variables `x1..xn` with integer constants.
//!
//! Trees are immutable values; every operation here is a pure function.
//! The textual form produced by `Display` is the canonical string format
//! (see `docs/expr-grammar.md`) and is parsed back by [`Expression::parse`].

mod canon;
mod latex;
pub(crate) mod parse;

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub use canon::{canonicalize, canonicalize_with, symbolic_equal, CanonError, CanonOptions, CanonicalForm};
pub use latex::to_latex;
pub use parse::ParseError;

/// Default node-count cap applied by canonicalization.
pub const DEFAULT_NODE_CAP: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Exp,
    Sin,
    Neg,
    Sqrt,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 4] = [UnaryOp::Exp, UnaryOp::Sin, UnaryOp::Neg, UnaryOp::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Sin => "sin",
            UnaryOp::Neg => "neg",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Exp => a.exp(),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Neg => -a,
            UnaryOp::Sqrt => a.sqrt(),
        }
    }
}

/// An operator tree.
///
/// The derived ordering compares node kind first (variable, constant, unary,
/// binary), then operator, variable index or constant value, then children
/// left to right. It is a total order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expression {
    /// 1-based variable index.
    Variable(u8),
    Constant(i64),
    Unary(UnaryOp, Box<Expression>),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn var(index: u8) -> Self {
        Expression::Variable(index)
    }

    pub fn constant(value: i64) -> Self {
        Expression::Constant(value)
    }

    pub fn unary(op: UnaryOp, child: Expression) -> Self {
        Expression::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expression, right: Expression) -> Self {
        Expression::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn exp(self) -> Self {
        Self::unary(UnaryOp::Exp, self)
    }

    pub fn sin(self) -> Self {
        Self::unary(UnaryOp::Sin, self)
    }

    pub fn sqrt(self) -> Self {
        Self::unary(UnaryOp::Sqrt, self)
    }

    pub fn neg(self) -> Self {
        Self::unary(UnaryOp::Neg, self)
    }

    /// Evaluates the tree at `point` (`point[i - 1]` is the value of `x_i`).
    ///
    /// Domain violations and overflow produce a non-finite result rather than
    /// an error. A variable index beyond `point.len()` evaluates to NaN.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        match self {
            Expression::Variable(i) => point.get(usize::from(*i).wrapping_sub(1)).copied().unwrap_or(f64::NAN),
            Expression::Constant(c) => *c as f64,
            Expression::Unary(op, child) => op.apply(child.evaluate(point)),
            Expression::Binary(op, l, r) => op.apply(l.evaluate(point), r.evaluate(point)),
        }
    }

    /// Depth of the tree; leaves have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expression::Variable(_) | Expression::Constant(_) => 0,
            Expression::Unary(_, c) => 1 + c.depth(),
            Expression::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expression::Variable(_) | Expression::Constant(_) => 1,
            Expression::Unary(_, c) => 1 + c.node_count(),
            Expression::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Largest variable index referenced, or 0 for constant trees.
    pub fn max_variable(&self) -> u8 {
        match self {
            Expression::Variable(i) => *i,
            Expression::Constant(_) => 0,
            Expression::Unary(_, c) => c.max_variable(),
            Expression::Binary(_, l, r) => l.max_variable().max(r.max_variable()),
        }
    }

    pub fn has_variable(&self) -> bool {
        self.max_variable() > 0
    }

    /// Number of constant leaves.
    pub fn constant_count(&self) -> usize {
        match self {
            Expression::Variable(_) => 0,
            Expression::Constant(_) => 1,
            Expression::Unary(_, c) => c.constant_count(),
            Expression::Binary(_, l, r) => l.constant_count() + r.constant_count(),
        }
    }

    /// Parses the canonical string format.
    pub fn parse(text: &str) -> Result<Expression, ParseError> {
        parse::parse(text)
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, parent: u8, right_of_same: bool) -> fmt::Result {
        match self {
            Expression::Variable(i) => write!(f, "x{i}"),
            Expression::Constant(c) => write!(f, "{c}"),
            Expression::Unary(op, child) => {
                write!(f, "{}(", op.name())?;
                child.write_with(f, 0, false)?;
                write!(f, ")")
            }
            Expression::Binary(op, l, r) => {
                let prec = op.precedence();
                let wrap = prec < parent || (prec == parent && right_of_same);
                if wrap {
                    write!(f, "(")?;
                }
                l.write_with(f, prec, false)?;
                write!(f, " {} ", op.symbol())?;
                r.write_with(f, prec, true)?;
                if wrap {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0, false)
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::parse(s)
    }
}

macro_rules! binary_operator {
    ($trait:ident, $method:ident, $op:expr) => {
        impl $trait for Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::binary($op, self, rhs)
            }
        }
    };
}

binary_operator!(Add, add, BinaryOp::Add);
binary_operator!(Sub, sub, BinaryOp::Sub);
binary_operator!(Mul, mul, BinaryOp::Mul);
binary_operator!(Div, div, BinaryOp::Div);

impl Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::unary(UnaryOp::Neg, self)
    }
}
