//! Polynomial restriction expressions.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! restriction := expr ( '=' expr )?
//! expr        := term ( ('+' | '-') term )*
//! term        := factor ( '*' factor )*
//! factor      := '-' factor | atom ( '^' INT )?
//! atom        := NUMBER | 'theta[' INT ']' | '(' expr ')'
//! ```
//!
//! `lhs = rhs` is stored as the single expression `lhs - rhs`, so every
//! restriction reads `g(theta) = 0`. Exponents are non-negative integers,
//! which keeps `g` polynomial and its first two derivatives exact.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// Value, gradient and Hessian of an expression at one point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet {
    fn constant(v: f64, p: usize) -> Self {
        Jet {
            value: v,
            grad: DVector::zeros(p),
            hess: DMatrix::zeros(p, p),
        }
    }

    fn mul(&self, other: &Jet) -> Jet {
        let value = self.value * other.value;
        let grad = &self.grad * other.value + &other.grad * self.value;
        let cross = &self.grad * other.grad.transpose();
        let hess = &self.hess * other.value + &other.hess * self.value + &cross + cross.transpose();
        Jet { value, grad, hess }
    }

    fn powi(&self, k: u32) -> Jet {
        let p = self.grad.len();
        match k {
            0 => Jet::constant(1.0, p),
            1 => self.clone(),
            _ => {
                let kf = k as f64;
                let d1 = kf * self.value.powi(k as i32 - 1);
                let d2 = kf * (kf - 1.0) * self.value.powi(k as i32 - 2);
                Jet {
                    value: self.value.powi(k as i32),
                    grad: &self.grad * d1,
                    hess: &self.hess * d1 + (&self.grad * self.grad.transpose()) * d2,
                }
            }
        }
    }
}

impl Expr {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Param(j) => theta[*j],
            Expr::Neg(e) => -e.eval(theta),
            Expr::Add(a, b) => a.eval(theta) + b.eval(theta),
            Expr::Sub(a, b) => a.eval(theta) - b.eval(theta),
            Expr::Mul(a, b) => a.eval(theta) * b.eval(theta),
            Expr::Pow(e, k) => e.eval(theta).powi(*k as i32),
        }
    }

    /// Forward-mode second-order evaluation.
    pub fn jet(&self, theta: &[f64]) -> Jet {
        let p = theta.len();
        match self {
            Expr::Const(v) => Jet::constant(*v, p),
            Expr::Param(j) => {
                let mut jet = Jet::constant(theta[*j], p);
                jet.grad[*j] = 1.0;
                jet
            }
            Expr::Neg(e) => {
                let j = e.jet(theta);
                Jet {
                    value: -j.value,
                    grad: -j.grad,
                    hess: -j.hess,
                }
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.jet(theta), b.jet(theta));
                Jet {
                    value: a.value + b.value,
                    grad: a.grad + b.grad,
                    hess: a.hess + b.hess,
                }
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.jet(theta), b.jet(theta));
                Jet {
                    value: a.value - b.value,
                    grad: a.grad - b.grad,
                    hess: a.hess - b.hess,
                }
            }
            Expr::Mul(a, b) => a.jet(theta).mul(&b.jet(theta)),
            Expr::Pow(e, k) => e.jet(theta).powi(*k),
        }
    }

    /// Polynomial degree bound (constants have degree 0).
    pub fn degree(&self) -> u32 {
        match self {
            Expr::Const(_) => 0,
            Expr::Param(_) => 1,
            Expr::Neg(e) => e.degree(),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.degree().max(b.degree()),
            Expr::Mul(a, b) => a.degree() + b.degree(),
            Expr::Pow(e, k) => e.degree() * k,
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Param(j) => Some(*j),
            Expr::Neg(e) | Expr::Pow(e, _) => e.max_index(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                match (a.max_index(), b.max_index()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(v) if *v < 0.0 => 3,
            Expr::Const(_) | Expr::Param(_) => 5,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` prints the shortest representation that round-trips.
            Expr::Const(v) if *v < 0.0 => write!(f, "-{:?}", -v),
            Expr::Const(v) => write!(f, "{v:?}"),
            Expr::Param(j) => write!(f, "theta[{j}]"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_child(f, 3)
            }
            Expr::Add(a, b) => {
                a.fmt_child(f, 1)?;
                write!(f, "+")?;
                b.fmt_child(f, 2)
            }
            Expr::Sub(a, b) => {
                a.fmt_child(f, 1)?;
                write!(f, "-")?;
                b.fmt_child(f, 2)
            }
            Expr::Mul(a, b) => {
                a.fmt_child(f, 2)?;
                write!(f, "*")?;
                b.fmt_child(f, 3)
            }
            Expr::Pow(e, k) => {
                e.fmt_child(f, 5)?;
                write!(f, "^{k}")
            }
        }
    }
}

/// A parsed restriction `g(theta) = 0` bound to a parameter dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionExpr {
    pub expr: Expr,
    pub source: String,
    pub dim: usize,
}

impl RestrictionExpr {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.expr.eval(theta)
    }

    pub fn is_affine(&self) -> bool {
        self.expr.degree() <= 1
    }
}

impl fmt::Display for RestrictionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)
    }
}

/// Parse `text` into a restriction over `theta` in R^p.
pub fn parse_restriction(text: &str, p: usize) -> Result<RestrictionExpr> {
    let mut parser = Parser::new(text);
    let lhs = parser.expr()?;
    let expr = if parser.eat('=') {
        let rhs = parser.expr()?;
        match rhs {
            Expr::Const(0.0) => lhs,
            rhs => Expr::Sub(Box::new(lhs), Box::new(rhs)),
        }
    } else {
        lhs
    };
    parser.skip_ws();
    if let Some(c) = parser.peek() {
        return Err(Error::Syntax {
            pos: parser.pos,
            msg: format!("unexpected '{c}'"),
        });
    }
    if let Some(j) = expr.max_index() {
        if j >= p {
            return Err(Error::IndexOutOfRange { index: j, dim: p });
        }
    }
    Ok(RestrictionExpr {
        expr,
        source: text.trim().to_string(),
        dim: p,
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src.get(self.pos).map(|&b| b as char)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn error(&self, msg: String) -> Error {
        Error::Syntax { pos: self.pos, msg }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while self.eat('*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            self.skip_ws();
            let start = self.pos;
            let k = self.exponent(start)?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn exponent(&mut self, start: usize) -> Result<u32> {
        if self.peek() == Some('-') {
            return Err(Error::NonIntegerExponent { pos: start });
        }
        let text = self.number_text();
        if text.is_empty() {
            return Err(Error::Syntax {
                pos: start,
                msg: "expected an integer exponent".into(),
            });
        }
        text.parse::<u32>()
            .map_err(|_| Error::NonIntegerExponent { pos: start })
    }

    fn number_text(&mut self) -> String {
        let start = self.pos;
        let src = self.src;
        let mut i = self.pos;
        while i < src.len() && (src[i].is_ascii_digit() || src[i] == b'.') {
            i += 1;
        }
        if i > start && i < src.len() && (src[i] == b'e' || src[i] == b'E') {
            let mut j = i + 1;
            if j < src.len() && (src[j] == b'+' || src[j] == b'-') {
                j += 1;
            }
            if j < src.len() && src[j].is_ascii_digit() {
                while j < src.len() && src[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        String::from_utf8_lossy(&src[start..i]).into_owned()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                let text = self.number_text();
                text.parse::<f64>()
                    .map(Expr::Const)
                    .map_err(|_| Error::Syntax {
                        pos: start,
                        msg: format!("invalid number '{text}'"),
                    })
            }
            Some('t') => {
                let start = self.pos;
                if !self.src[self.pos..].starts_with(b"theta") {
                    return Err(self.error("unknown identifier".into()));
                }
                self.pos += 5;
                self.expect('[')?;
                self.skip_ws();
                let text = self.number_text();
                let index = text.parse::<usize>().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("invalid parameter index '{text}'"),
                })?;
                self.expect(']')?;
                Ok(Expr::Param(index))
            }
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_restriction_parses_to_four_refs() {
        let r = parse_restriction("theta[1]+theta[2]+theta[3]+theta[4]=0", 11).unwrap();
        let mut theta = vec![0.0; 11];
        theta[1..5].copy_from_slice(&[0.3, 0.2, -0.5, 0.0]);
        assert_eq!(r.eval(&theta), 0.0);
        assert!(r.is_affine());
        let jet = r.expr.jet(&theta);
        let expected: Vec<f64> = (0..11)
            .map(|j| if (1..5).contains(&j) { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(jet.grad.as_slice(), expected.as_slice());
    }

    #[test]
    fn identity_restriction() {
        let r = parse_restriction("theta[0]", 1).unwrap();
        assert_eq!(r.expr, Expr::Param(0));
    }

    #[test]
    fn cubic_relaxation_is_lhs_minus_rhs() {
        let r = parse_restriction("theta[1]-(-theta[2])^3=0", 3).unwrap();
        assert_eq!(r.expr.degree(), 3);
        let theta = [0.0, 0.2, -0.5];
        assert!((r.eval(&theta) - (0.2 - 0.125)).abs() < 1e-15);
        // d/dtheta2 [-(-t)^3] = 3(-t)^2 = 0.75 at t = -0.5
        let jet = r.expr.jet(&theta);
        assert!((jet.grad[2] - 0.75).abs() < 1e-15);

        let r2 = parse_restriction("theta[1] = (-theta[2])^3", 3).unwrap();
        assert_eq!(r2.eval(&theta), r.eval(&theta));
    }

    #[test]
    fn power_rule() {
        let r = parse_restriction("theta[0]^2", 1).unwrap();
        let jet = r.expr.jet(&[2.0]);
        assert_eq!(jet.value, 4.0);
        assert_eq!(jet.grad[0], 4.0);
        assert_eq!(jet.hess[(0, 0)], 2.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_restriction("theta[99]", 3),
            Err(Error::IndexOutOfRange { index: 99, dim: 3 })
        ));
        assert!(matches!(
            parse_restriction("theta[0]^1.5", 1),
            Err(Error::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            parse_restriction("theta[0]^-1", 1),
            Err(Error::NonIntegerExponent { .. })
        ));
        match parse_restriction("theta[0] + * 2", 1) {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 11),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_restriction("theta[0]) ", 1),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_restriction("beta[0]", 1),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_restriction("", 1),
            Err(Error::Syntax { .. })
        ));
    }

    #[test]
    fn numbers_with_exponents() {
        let r = parse_restriction("1.5e-1*theta[0] - 2", 1).unwrap();
        assert!((r.eval(&[10.0]) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn display_is_parseable() {
        for src in [
            "theta[1]-(-theta[2])^3",
            "-(theta[0]+theta[1])^2*3-theta[2]",
            "theta[0]-(theta[1]-theta[2])",
            "2*-theta[0]",
        ] {
            let r = parse_restriction(src, 3).unwrap();
            let printed = r.to_string();
            let again = parse_restriction(&printed, 3).unwrap();
            let theta = [0.3, -1.1, 0.7];
            assert_eq!(r.eval(&theta), again.eval(&theta), "{src} -> {printed}");
        }
    }
}
