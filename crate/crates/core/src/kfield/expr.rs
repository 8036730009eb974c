//! Recursive-descent parser for closed-form curvature candidates.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ('-'|'+')* base ('^' integer)?
//! base   := number | 'x1'..'x5' | '(' expr ')' | ('exp'|'sin'|'cos') '(' expr ')'
//! ```
//!
//! A leading sign on a factor is accepted as a convenience; it binds looser
//! than `^`, so `-x1^2` is `-(x1^2)`.

use super::jet::Jet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64; 5]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, n) => a.eval(x).powi(*n),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
        }
    }

    pub fn jet(&self, x: &[f64; 5], order: u8) -> Jet {
        match self {
            Expr::Num(v) => Jet::constant(*v, order),
            Expr::Var(i) => Jet::variable(*i, x[*i], order),
            Expr::Neg(a) => a.jet(x, order).neg(),
            Expr::Add(a, b) => a.jet(x, order).add(&b.jet(x, order)),
            Expr::Sub(a, b) => a.jet(x, order).sub(&b.jet(x, order)),
            Expr::Mul(a, b) => a.jet(x, order).mul(&b.jet(x, order)),
            Expr::Div(a, b) => a.jet(x, order).div(&b.jet(x, order)),
            Expr::Pow(a, n) => a.jet(x, order).powi(*n),
            Expr::Exp(a) => a.jet(x, order).exp(),
            Expr::Sin(a) => a.jet(x, order).sin(),
            Expr::Cos(a) => a.jet(x, order).cos(),
        }
    }
}

pub fn parse(source: &str) -> Result<Expr> {
    let mut p = Parser { src: source.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        let found = match self.src.get(self.pos) {
            Some(c) => format!("'{}'", *c as char),
            None => "end of input".to_string(),
        };
        Error::Parse {
            offset: self.pos,
            message: format!("{message} (found {found})"),
        }
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat(b'+') {
            return self.factor();
        }
        let base = self.base()?;
        if self.eat(b'^') {
            let n = self.integer()?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i32> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.src.get(self.pos), Some(b'-') | Some(b'+')) {
            self.pos += 1;
        }
        let digits = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits {
            self.pos = start;
            return Err(self.error("expected integer exponent"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<i32>().map_err(|_| {
            self.pos = start;
            self.error("exponent out of range")
        })
    }

    fn base(&mut self) -> Result<Expr> {
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.error("expected operand")),
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(e);
        }
        if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let ident = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let var = match ident {
                "x1" => Some(0),
                "x2" => Some(1),
                "x3" => Some(2),
                "x4" => Some(3),
                "x5" => Some(4),
                _ => None,
            };
            if let Some(i) = var {
                return Ok(Expr::Var(i));
            }
            let ctor: fn(Box<Expr>) -> Expr = match ident {
                "exp" => Expr::Exp,
                "sin" => Expr::Sin,
                "cos" => Expr::Cos,
                _ => {
                    self.pos = start;
                    return Err(self.error(&format!("unknown identifier '{ident}'")));
                }
            };
            if !self.eat(b'(') {
                return Err(self.error("expected '(' after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(ctor(Box::new(arg)));
        }
        Err(self.error("expected operand"))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > b
        };
        let mut p = self.pos;
        let int_part = digits(&mut p);
        let mut frac_part = false;
        if p < s.len() && s[p] == b'.' {
            p += 1;
            frac_part = digits(&mut p);
        }
        if !int_part && !frac_part {
            return Err(self.error("malformed number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            } else {
                self.pos = p;
                return Err(self.error("malformed exponent"));
            }
        }
        self.pos = p;
        let text = std::str::from_utf8(&s[start..p]).expect("ascii");
        text.parse::<f64>().map(Expr::Num).map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_examples() {
        assert_eq!(parse("2").unwrap(), Expr::Num(2.0));
        let e = parse("1e0 + x1^2").unwrap();
        assert_eq!(e.eval(&[3.0, 0.0, 0.0, 0.0, 0.0]), 10.0);
        let e = parse(" 2 + x5 ").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0, 0.0, 0.0, 0.5]), 2.5);
    }

    #[test]
    fn reports_offset() {
        match parse("1 +* x1") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("2 + y1"), Err(Error::Parse { offset: 4, .. })));
        assert!(matches!(parse("(1 + x1"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(parse("x1^1.5"), Err(Error::Parse { .. })));
        assert!(matches!(parse(""), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse("1e+"), Err(Error::Parse { .. })));
    }

    #[test]
    fn precedence() {
        let x = [0.5, 2.0, 0.0, 0.0, 0.0];
        assert_eq!(parse("-x2^2").unwrap().eval(&x), -4.0);
        assert_eq!(parse("1 - 2 - 3").unwrap().eval(&x), -4.0);
        assert_eq!(parse("8 / 2 / 2").unwrap().eval(&x), 2.0);
        assert_eq!(parse("2 * (x1 + 1)^2").unwrap().eval(&x), 4.5);
        assert_eq!(parse("x2^-1").unwrap().eval(&x), 0.5);
        assert!((parse("exp(x1) * cos(0) + sin(.5)").unwrap().eval(&x)
            - (0.5f64.exp() + 0.5f64.sin()))
        .abs()
            < 1e-15);
    }
}
