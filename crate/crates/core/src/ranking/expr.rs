//! Scoring expressions over a user's aggregated terms.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/' | '×' | '÷') unary)*
//! unary   := '-' unary | primary
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `sum_TF`, `sum_TS`, `sum_TA`, `sum_IC`, `FR` and
//! `participations`; functions are `abs`, `log` (natural), `min` and `max`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::ScoreTerms;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    SumTf,
    SumTs,
    SumTa,
    SumIc,
    Fr,
    Participations,
}

impl Var {
    const ALL: [(&'static str, Var); 6] = [
        ("sum_TF", Var::SumTf),
        ("sum_TS", Var::SumTs),
        ("sum_TA", Var::SumTa),
        ("sum_IC", Var::SumIc),
        ("FR", Var::Fr),
        ("participations", Var::Participations),
    ];

    fn lookup(name: &str) -> Option<Var> {
        Self::ALL.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }

    fn name(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(_, v)| *v == self)
            .map(|(n, _)| *n)
            .expect("listed")
    }

    fn value(self, t: &ScoreTerms) -> f64 {
        match self {
            Var::SumTf => t.sum_tf,
            Var::SumTs => t.sum_ts,
            Var::SumTa => t.sum_ta,
            Var::SumIc => t.sum_ic,
            Var::Fr => t.fr,
            Var::Participations => t.participations as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Log,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{message} at position {position}")]
pub struct ParseError {
    /// Character offset into the source.
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("result is not a finite number")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            _ if c.is_whitespace() => i += 1,
            '0'..='9' | '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse::<f64>().map_err(|_| ParseError {
                    position: start,
                    message: format!("malformed number {text:?}"),
                })?;
                out.push((start, Tok::Num(n)));
            }
            _ if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(chars[start..i].iter().collect())));
            }
            '+' | '-' | '*' | '/' => {
                out.push((start, Tok::Op(c)));
                i += 1;
            }
            '×' => {
                out.push((start, Tok::Op('*')));
                i += 1;
            }
            '÷' => {
                out.push((start, Tok::Op('/')));
                i += 1;
            }
            '(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            _ => {
                return Err(ParseError {
                    position: start,
                    message: format!("unexpected character {c:?}"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Op('-')) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let func = match name.as_str() {
                        "abs" => Func::Abs,
                        "log" => Func::Log,
                        "min" => Func::Min,
                        "max" => Func::Max,
                        _ => {
                            return Err(ParseError {
                                position: start,
                                message: format!("unknown function {name:?}"),
                            })
                        }
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "')' or ','")?;
                    let ok = match func {
                        Func::Abs | Func::Log => args.len() == 1,
                        Func::Min | Func::Max => args.len() >= 2,
                    };
                    if !ok {
                        return Err(ParseError {
                            position: start,
                            message: format!("wrong number of arguments to {name}"),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Var::lookup(&name).map(Expr::Var).ok_or_else(|| ParseError {
                        position: start,
                        message: format!(
                            "unknown identifier {name:?}; expected one of {}",
                            Var::ALL.map(|(n, _)| n).join(", ")
                        ),
                    })
                }
            }
            Some(_) => self.error("expected a number, identifier or '('"),
            None => self.error("unexpected end of expression"),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            end: src.chars().count(),
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return p.error("unexpected trailing input");
        }
        Ok(e)
    }

    pub fn eval(&self, t: &ScoreTerms) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(n) => *n,
            Expr::Var(v) => v.value(t),
            Expr::Neg(e) => -e.eval(t)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(t)?, b.eval(t)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div if y == 0.0 => return Err(EvalError::DivisionByZero),
                    BinOp::Div => x / y,
                }
            }
            Expr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval(t))
                    .collect::<Result<Vec<_>, _>>()?;
                match f {
                    Func::Abs => vals[0].abs(),
                    Func::Log if vals[0] <= 0.0 => return Err(EvalError::LogDomain),
                    Func::Log => vals[0].ln(),
                    Func::Min => vals.into_iter().fold(f64::INFINITY, f64::min),
                    Func::Max => vals.into_iter().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let c = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                };
                write!(f, "({a} {c} {b})")
            }
            Expr::Call(func, args) => {
                let name = match func {
                    Func::Abs => "abs",
                    Func::Log => "log",
                    Func::Min => "min",
                    Func::Max => "max",
                };
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
