//! Structural-function expressions.
//!
//! The language is deliberately small: real literals, parent references
//! `p0 .. p(k-1)`, parentheses, binary `+ - *`, unary minus and the two
//! unary functions `sin` and `cos`. Every expression is total on finite
//! inputs, so evaluation never fails.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary ('*' unary)*
//! unary   := '-' unary | primary
//! primary := number | 'p' digits | ('sin' | 'cos') '(' expr ')' | '(' expr ')'
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Parent(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, parents: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Parent(k) => parents[*k],
            Expr::Neg(a) => -a.eval(parents),
            Expr::Add(a, b) => a.eval(parents) + b.eval(parents),
            Expr::Sub(a, b) => a.eval(parents) - b.eval(parents),
            Expr::Mul(a, b) => a.eval(parents) * b.eval(parents),
            Expr::Sin(a) => a.eval(parents).sin(),
            Expr::Cos(a) => a.eval(parents).cos(),
        }
    }

    /// Largest parent index referenced, if any.
    pub fn max_parent(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Parent(k) => Some(*k),
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) => a.max_parent(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                match (a.max_parent(), b.max_parent()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }
}

/// Canonical printer: binary nodes are fully parenthesized and literals use
/// Rust's shortest round-trip float formatting, so `parse(print(e)) == e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Parent(k) => write!(f, "p{k}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
        }
    }
}

/// A parsed structural function `f_n` together with its arity `|pa(n)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFunction {
    expr: Expr,
    arity: usize,
}

impl StructuralFunction {
    pub fn new(expr: Expr, arity: usize) -> Result<Self, ParseError> {
        if let Some(k) = expr.max_parent() {
            if k >= arity {
                return Err(ParseError::new(
                    0,
                    format!("parent reference p{k} out of range for arity {arity}"),
                ));
            }
        }
        Ok(Self { expr, arity })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            expr: Expr::Const(value),
            arity: 0,
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, parents: &[f64]) -> f64 {
        debug_assert_eq!(parents.len(), self.arity);
        self.expr.eval(parents)
    }
}

impl fmt::Display for StructuralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

pub fn parse_expression(source: &str, arity: usize) -> Result<StructuralFunction, ParseError> {
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
        arity,
    };
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(ParseError::new(parser.pos, "unexpected trailing input"));
    }
    Ok(StructuralFunction { expr, arity })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    arity: usize,
}

impl Parser<'_> {
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
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(ParseError::new(
                self.pos,
                format!("expected '{}', found '{}'", byte as char, b as char),
            )),
            None => Err(ParseError::new(
                self.pos,
                format!("expected '{}', found end of input", byte as char),
            )),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            // Negated literals fold into the literal so printing stays canonical.
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return Err(ParseError::new(self.pos, "unexpected end of input")),
        };
        let b = self.src[start];
        if b == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if b.is_ascii_digit() || b == b'.' {
            return self.number();
        }
        if b.is_ascii_alphabetic() {
            let mut end = start;
            while end < self.src.len() && self.src[end].is_ascii_alphanumeric() {
                end += 1;
            }
            let word = std::str::from_utf8(&self.src[start..end]).expect("ascii");
            self.pos = end;
            return match word {
                "sin" | "cos" => {
                    self.expect(b'(')?;
                    let arg = Box::new(self.expr()?);
                    self.expect(b')')?;
                    Ok(if word == "sin" {
                        Expr::Sin(arg)
                    } else {
                        Expr::Cos(arg)
                    })
                }
                _ if word.len() > 1
                    && word.starts_with('p')
                    && word[1..].bytes().all(|c| c.is_ascii_digit()) =>
                {
                    let k: usize = word[1..]
                        .parse()
                        .map_err(|_| ParseError::new(start, "parent index too large"))?;
                    if k >= self.arity {
                        return Err(ParseError::new(
                            start,
                            format!("parent reference p{k} out of range for arity {}", self.arity),
                        ));
                    }
                    Ok(Expr::Parent(k))
                }
                _ => Err(ParseError::new(start, format!("unknown identifier `{word}`"))),
            };
        }
        Err(ParseError::new(start, format!("unexpected character '{}'", b as char)))
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let src = self.src;
        let mut end = start;
        while end < src.len() && (src[end].is_ascii_digit() || src[end] == b'.') {
            end += 1;
        }
        if end < src.len() && (src[end] == b'e' || src[end] == b'E') {
            let mut exp = end + 1;
            if exp < src.len() && (src[exp] == b'+' || src[exp] == b'-') {
                exp += 1;
            }
            if exp < src.len() && src[exp].is_ascii_digit() {
                while exp < src.len() && src[exp].is_ascii_digit() {
                    exp += 1;
                }
                end = exp;
            }
        }
        let text = std::str::from_utf8(&src[start..end]).expect("ascii");
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, format!("malformed number `{text}`")))?;
        self.pos = end;
        Ok(Expr::Const(value))
    }
}
