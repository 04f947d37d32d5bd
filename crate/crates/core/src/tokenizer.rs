//! Numeric cell encoding and LaTeX expression tokenization.
//!
//! Dataset cells become `(mantissa, exponent)` pairs in base-10 scientific
//! notation with the sign folded into the mantissa. Target expressions are
//! rendered to LaTeX and split into a fixed token inventory, constants
//! digit by digit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{BinaryOp, Expression, UnaryOp};

/// Decimal digits kept in the mantissa.
pub const MANTISSA_DECIMALS: usize = 4;
pub const MIN_EXPONENT: i32 = -100;
pub const MAX_EXPONENT: i32 = 100;
/// Number of distinct exponent values (`MIN_EXPONENT..=MAX_EXPONENT`).
pub const EXPONENT_RANGE: usize = (MAX_EXPONENT - MIN_EXPONENT + 1) as usize;
pub const MAX_OUTPUT_LEN: usize = 256;
pub const VOCABULARY_VERSION: u32 = 1;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

/// Largest power exponent accepted when decoding `^{k}`.
const MAX_DECODED_POWER: u32 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenizerError {
    #[error("value {0} is not representable (non-finite or exponent outside [-100, 100])")]
    Range(f64),
    #[error("unknown symbol at byte {position} of '{text}'")]
    UnknownSymbol { text: String, position: usize },
    #[error("sequence of {len} tokens exceeds the maximum output length {max}")]
    Length { len: usize, max: usize },
    #[error("malformed expression at token {position}: {message}")]
    Parse { position: usize, message: String },
}

/// A dataset cell as `mantissa · 10^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCode {
    pub mantissa: f64,
    pub exponent: i32,
}

impl CellCode {
    /// Index of the exponent in a table covering `[-100, 100]`.
    pub fn exponent_index(&self) -> usize {
        (self.exponent - MIN_EXPONENT) as usize
    }
}

/// Encodes a finite value in normalized scientific form, mantissa rounded to
/// four decimals. `0` maps to `(0.0, 0)`.
pub fn encode_value(x: f64) -> Result<CellCode, TokenizerError> {
    if !x.is_finite() {
        return Err(TokenizerError::Range(x));
    }
    if x == 0.0 {
        return Ok(CellCode { mantissa: 0.0, exponent: 0 });
    }
    // `{:e}` rounds correctly and renormalizes (9.99995 -> 1.0000e1).
    let text = format!("{:.*e}", MANTISSA_DECIMALS, x);
    let (m, e) = text.split_once('e').expect("scientific format");
    let mantissa: f64 = m.parse().expect("mantissa");
    let exponent: i32 = e.parse().expect("exponent");
    if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&exponent) {
        return Err(TokenizerError::Range(x));
    }
    Ok(CellCode { mantissa, exponent })
}

pub fn decode_value(code: CellCode) -> f64 {
    if code.mantissa == 0.0 {
        return 0.0;
    }
    // Splitting the power keeps 10^±100 exact enough without overflow.
    code.mantissa * 10f64.powi(code.exponent)
}

/// True when `x` can be encoded.
pub fn is_representable(x: f64) -> bool {
    encode_value(x).is_ok()
}

/// The output token inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    version: u32,
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

const STRUCTURE_TOKENS: [&str; 12] =
    ["+", "-", "\\cdot", "\\frac", "\\sqrt", "\\sin", "\\exp", "^", "{", "}", "(", ")"];

impl Vocabulary {
    pub fn new(n_vars: usize) -> Self {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<bos>".into(), "<eos>".into()];
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend((1..=n_vars).map(|i| format!("x_{{{i}}}")));
        tokens.extend(STRUCTURE_TOKENS.iter().map(|s| s.to_string()));
        Self::from_tokens(VOCABULARY_VERSION, tokens)
    }

    fn from_tokens(version: u32, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { version, tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let v: Vocabulary = serde_json::from_str(text)?;
        Ok(Self::from_tokens(v.version, v.tokens))
    }

    /// SHA-256 over the ordered token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.to_le_bytes());
        for t in &self.tokens {
            h.update((t.len() as u32).to_le_bytes());
            h.update(t.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Splits a LaTeX string into token ids, wrapped in BOS/EOS.
    pub fn encode_expression(&self, latex: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut ids = vec![BOS];
        let bytes = latex.as_bytes();
        let mut pos = 0;
        'outer: while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
                continue;
            }
            // U+00B7 is accepted as an alias of \cdot.
            if latex[pos..].starts_with('·') {
                ids.push(self.id("\\cdot").expect("\\cdot in vocabulary"));
                pos += '·'.len_utf8();
                continue;
            }
            // Longest match over the inventory.
            let mut best: Option<(usize, u32)> = None;
            for (i, tok) in self.tokens.iter().enumerate().skip(3) {
                if latex[pos..].starts_with(tok.as_str()) && best.is_none_or(|(len, _)| tok.len() > len) {
                    best = Some((tok.len(), i as u32));
                }
            }
            if let Some((len, id)) = best {
                ids.push(id);
                pos += len;
                continue 'outer;
            }
            return Err(TokenizerError::UnknownSymbol { text: latex.to_string(), position: pos });
        }
        ids.push(EOS);
        if ids.len() > MAX_OUTPUT_LEN {
            return Err(TokenizerError::Length { len: ids.len(), max: MAX_OUTPUT_LEN });
        }
        Ok(ids)
    }

    /// Concatenates the tokens between BOS and EOS back into a string.
    pub fn render(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD | BOS => continue,
                EOS => break,
                _ => {
                    if let Some(t) = self.token(id) {
                        if !out.is_empty() && matches!(t, "+" | "-" | "\\cdot") {
                            out.push(' ');
                        }
                        out.push_str(t);
                        if matches!(t, "+" | "-" | "\\cdot") {
                            out.push(' ');
                        }
                    }
                }
            }
        }
        out
    }

    /// Parses a token sequence into an expression. A leading BOS is skipped
    /// and parsing stops at EOS; anything malformed is a parse error.
    pub fn decode_expression(&self, ids: &[u32]) -> Result<Expression, TokenizerError> {
        let mut start = 0;
        if ids.first() == Some(&BOS) {
            start = 1;
        }
        let end = ids[start..].iter().position(|&t| t == EOS).map(|p| p + start);
        let Some(end) = end else {
            return Err(TokenizerError::Parse { position: ids.len(), message: "missing end of sequence".into() });
        };
        let mut toks = Vec::with_capacity(end - start);
        for (i, &id) in ids[start..end].iter().enumerate() {
            let t = self.token(id).filter(|_| id > EOS).ok_or_else(|| TokenizerError::Parse {
                position: start + i,
                message: format!("unexpected token id {id}"),
            })?;
            toks.push(t);
        }
        let mut p = LatexParser { toks: &toks, pos: 0, offset: start };
        let e = p.sum()?;
        if p.pos != toks.len() {
            return Err(p.error("trailing tokens"));
        }
        Ok(e)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct LatexParser<'a> {
    toks: &'a [&'a str],
    pos: usize,
    offset: usize,
}

impl<'a> LatexParser<'a> {
    fn error(&self, message: &str) -> TokenizerError {
        TokenizerError::Parse { position: self.pos + self.offset, message: message.to_string() }
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn expect(&mut self, tok: &str) -> Result<(), TokenizerError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{tok}'")))
        }
    }

    fn sum(&mut self) -> Result<Expression, TokenizerError> {
        let mut acc = if self.peek() == Some("-") {
            self.pos += 1;
            Expression::unary(UnaryOp::Neg, self.product()?)
        } else {
            self.product()?
        };
        loop {
            let op = match self.peek() {
                Some("+") => BinaryOp::Add,
                Some("-") => BinaryOp::Sub,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.product()?;
            acc = Expression::binary(op, acc, rhs);
        }
    }

    fn product(&mut self) -> Result<Expression, TokenizerError> {
        let mut acc = self.factor()?;
        while self.peek() == Some("\\cdot") {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = Expression::binary(BinaryOp::Mul, acc, rhs);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expression, TokenizerError> {
        let base = self.primary()?;
        if self.peek() != Some("^") {
            return Ok(base);
        }
        self.pos += 1;
        self.expect("{")?;
        let k = self.integer()?;
        self.expect("}")?;
        if k == 0 || k > i64::from(MAX_DECODED_POWER) {
            return Err(self.error("unsupported power"));
        }
        let mut acc = base.clone();
        for _ in 1..k {
            acc = Expression::binary(BinaryOp::Mul, acc, base.clone());
        }
        Ok(acc)
    }

    fn integer(&mut self) -> Result<i64, TokenizerError> {
        let mut digits = String::new();
        while let Some(t) = self.peek() {
            if t.len() == 1 && t.as_bytes()[0].is_ascii_digit() {
                digits.push_str(t);
                self.pos += 1;
            } else {
                break;
            }
        }
        if digits.is_empty() {
            return Err(self.error("expected digits"));
        }
        digits.parse().map_err(|_| self.error("integer out of range"))
    }

    fn primary(&mut self) -> Result<Expression, TokenizerError> {
        let Some(tok) = self.peek() else {
            return Err(self.error("unexpected end of expression"));
        };
        match tok {
            "(" => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(")")?;
                Ok(e)
            }
            "\\frac" => {
                self.pos += 1;
                self.expect("{")?;
                let num = self.sum()?;
                self.expect("}")?;
                self.expect("{")?;
                let den = self.sum()?;
                self.expect("}")?;
                Ok(Expression::binary(BinaryOp::Div, num, den))
            }
            "\\sqrt" => {
                self.pos += 1;
                self.expect("{")?;
                let e = self.sum()?;
                self.expect("}")?;
                Ok(Expression::unary(UnaryOp::Sqrt, e))
            }
            "\\sin" | "\\exp" => {
                let op = if tok == "\\sin" { UnaryOp::Sin } else { UnaryOp::Exp };
                self.pos += 1;
                self.expect("(")?;
                let e = self.sum()?;
                self.expect(")")?;
                Ok(Expression::unary(op, e))
            }
            t if t.starts_with("x_{") => {
                self.pos += 1;
                let idx: u8 = t[3..t.len() - 1].parse().map_err(|_| self.error("bad variable"))?;
                Ok(Expression::Variable(idx))
            }
            t if t.len() == 1 && t.as_bytes()[0].is_ascii_digit() => Ok(Expression::Constant(self.integer()?)),
            _ => Err(self.error("unexpected token")),
        }
    }
}
