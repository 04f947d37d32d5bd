//! LaTeX rendering of expression trees.
//!
//! The output uses a small fixed inventory (`x_{i}`, digits, `+`, `-`,
//! `\cdot`, `\frac`, `\sqrt`, `\sin`, `\exp`, `^`, braces and parentheses)
//! and is read back by `tokenizer::decode_expression`.

use super::{BinaryOp, Expression, UnaryOp};

pub fn to_latex(expr: &Expression) -> String {
    let mut out = String::new();
    sum(expr, &mut out);
    out
}

fn sum(e: &Expression, out: &mut String) {
    let mut terms = Vec::new();
    flatten_sum(e, true, &mut terms);
    for (i, (positive, term)) in terms.into_iter().enumerate() {
        let mut rendered = String::new();
        product(term, &mut rendered);
        if i == 0 {
            if !positive {
                out.push('-');
                wrap_if_signed(&rendered, out);
            } else {
                out.push_str(&rendered);
            }
            continue;
        }
        out.push_str(if positive { " + " } else { " - " });
        wrap_if_signed(&rendered, out);
    }
}

fn wrap_if_signed(rendered: &str, out: &mut String) {
    if rendered.starts_with('-') {
        out.push('(');
        out.push_str(rendered);
        out.push(')');
    } else {
        out.push_str(rendered);
    }
}

/// Flattens the left spine of `+`/`-`. A sum on the right of `-` stays a
/// single term and is parenthesized when rendered as a factor.
fn flatten_sum<'a>(e: &'a Expression, positive: bool, terms: &mut Vec<(bool, &'a Expression)>) {
    match e {
        Expression::Binary(op @ (BinaryOp::Add | BinaryOp::Sub), l, r) => {
            flatten_sum(l, positive, terms);
            let right_positive = if *op == BinaryOp::Add { positive } else { !positive };
            match r.as_ref() {
                Expression::Binary(BinaryOp::Add | BinaryOp::Sub, ..) if *op == BinaryOp::Add => {
                    flatten_sum(r, right_positive, terms)
                }
                _ => terms.push((right_positive, r)),
            }
        }
        Expression::Unary(UnaryOp::Neg, child) => terms.push((!positive, child)),
        _ => terms.push((positive, e)),
    }
}

fn flatten_product<'a>(e: &'a Expression, factors: &mut Vec<&'a Expression>) {
    match e {
        Expression::Binary(BinaryOp::Mul, l, r) => {
            flatten_product(l, factors);
            flatten_product(r, factors);
        }
        _ => factors.push(e),
    }
}

fn product(e: &Expression, out: &mut String) {
    let mut factors = Vec::new();
    flatten_product(e, &mut factors);
    let mut start = 0;
    if factors.len() > 1 && matches!(factors[0], Expression::Constant(-1)) {
        out.push('-');
        start = 1;
    }
    let mut i = start;
    let mut first = true;
    while i < factors.len() {
        let mut run = 1;
        while i + run < factors.len() && factors[i + run] == factors[i] {
            run += 1;
        }
        if !first {
            out.push_str(" \\cdot ");
        }
        first = false;
        factor(factors[i], out);
        if run > 1 {
            out.push_str(&format!("^{{{run}}}"));
        }
        i += run;
    }
}

fn factor(e: &Expression, out: &mut String) {
    match e {
        Expression::Variable(i) => out.push_str(&format!("x_{{{i}}}")),
        Expression::Constant(c) if *c >= 0 => out.push_str(&c.to_string()),
        Expression::Constant(c) => out.push_str(&format!("(-{})", c.unsigned_abs())),
        Expression::Unary(UnaryOp::Neg, child) => {
            out.push_str("(-");
            let mut inner = String::new();
            match child.as_ref() {
                Expression::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => {
                    inner.push('(');
                    sum(child, &mut inner);
                    inner.push(')');
                }
                other => product(other, &mut inner),
            }
            wrap_if_signed(&inner, out);
            out.push(')');
        }
        Expression::Unary(op, child) => {
            let (open, close) = match op {
                UnaryOp::Sqrt => ("\\sqrt{", "}"),
                UnaryOp::Sin => ("\\sin(", ")"),
                UnaryOp::Exp => ("\\exp(", ")"),
                UnaryOp::Neg => unreachable!(),
            };
            out.push_str(open);
            sum(child, out);
            out.push_str(close);
        }
        Expression::Binary(BinaryOp::Div, l, r) => {
            out.push_str("\\frac{");
            sum(l, out);
            out.push_str("}{");
            sum(r, out);
            out.push('}');
        }
        Expression::Binary(BinaryOp::Mul, ..) => product(e, out),
        Expression::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => {
            out.push('(');
            sum(e, out);
            out.push(')');
        }
    }
}
