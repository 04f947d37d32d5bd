//! Recursive-descent parser for the canonical string format.
//!
//! ```text
//! expr := term (("+" | "-") term)*
//! term := atom (("*" | "/") atom)*
//! atom := "-"? digits | "x" digits | name "(" expr ")" | "(" expr ")"
//! ```

use thiserror::Error;

use super::{BinaryOp, Expression, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

pub(super) fn parse(text: &str) -> Result<Expression, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError { position: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", byte as char)))
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut acc = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.term()?;
            acc = Expression::binary(op, acc, rhs);
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut acc = self.atom()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.atom()?;
            acc = Expression::binary(op, acc, rhs);
        }
    }

    fn digits(&mut self) -> Result<&str, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected digits"));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits"))
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                let digits = self.digits()?;
                let v: i64 = format!("-{digits}").parse().map_err(|_| self.error("constant out of range"))?;
                Ok(Expression::Constant(v))
            }
            Some(b) if b.is_ascii_digit() => {
                let v: i64 = self.digits()?.parse().map_err(|_| self.error("constant out of range"))?;
                Ok(Expression::Constant(v))
            }
            Some(b'x') => {
                self.pos += 1;
                let idx: u8 = self.digits()?.parse().map_err(|_| self.error("variable index out of range"))?;
                if idx == 0 {
                    return Err(self.error("variable indices start at 1"));
                }
                Ok(Expression::Variable(idx))
            }
            Some(b) if b.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii name");
                let op = UnaryOp::from_name(name).ok_or_else(|| ParseError {
                    position: start,
                    message: format!("unknown function '{name}'"),
                })?;
                self.expect(b'(')?;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(Expression::unary(op, e))
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn arb_expression() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![
            (1u8..=3).prop_map(Expression::Variable),
            (-20i64..=20).prop_map(Expression::Constant),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (prop::sample::select(UnaryOp::ALL.to_vec()), inner.clone())
                    .prop_map(|(op, c)| Expression::unary(op, c)),
                (prop::sample::select(BinaryOp::ALL.to_vec()), inner.clone(), inner)
                    .prop_map(|(op, l, r)| Expression::binary(op, l, r)),
            ]
        })
    }

    #[test]
    fn parses_examples() {
        let e = parse("x1 + x2 * sin(x1)").unwrap();
        assert_eq!(e, Expression::var(1) + Expression::var(2) * Expression::var(1).sin());
        assert_eq!(parse("-3*x1").unwrap(), Expression::constant(-3) * Expression::var(1));
        assert_eq!(parse("x1 - -3").unwrap(), Expression::var(1) - Expression::constant(-3));
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse("x1 +").is_err());
        assert!(parse("foo(x1)").is_err());
        assert!(parse("(x1").is_err());
        assert!(parse("x0").is_err());
        assert!(parse("x1 x2").is_err());
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(e in arb_expression()) {
            let text = e.to_string();
            let back = parse(&text).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.to_string(), text);
        }
    }
}
