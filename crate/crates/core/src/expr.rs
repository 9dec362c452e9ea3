//! A small expression language for intensities over `(n, x, y)`.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := atom ("^" atom)?
//! atom   := number | "n" | "x" | "y" | fn "(" expr ("," expr)* ")" | "(" expr ")"
//! fn     := "exp" | "log" | "min" | "max" | "if_gt"
//! ```
//!
//! `if_gt(a, b, p, q)` is `p` when `a > b` and `q` otherwise; it is the only
//! source of discontinuities, and [`IntensityExpr::breakpoints_along_flow`]
//! locates where its guard flips along a deterministic flow segment.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::ParseError;
use crate::state::StateX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    N,
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Min,
    Max,
    IfGt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::IfGt => "if_gt",
        }
    }

    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            "if_gt" => Func::IfGt,
            _ => return None,
        })
    }

    fn check_arity(self, got: usize) -> Result<(), &'static str> {
        let ok = match self {
            Func::Exp | Func::Log => got == 1,
            Func::Min | Func::Max => got >= 1,
            Func::IfGt => got == 4,
        };
        if ok {
            return Ok(());
        }
        Err(match self {
            Func::Exp | Func::Log => "1",
            Func::Min | Func::Max => "at least 1",
            Func::IfGt => "4",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, n: f64, x: f64, y: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::N) => n,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Binary(op, a, b) => {
                let a = a.eval(n, x, y);
                let b = b.eval(n, x, y);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(f, args) => match f {
                Func::Exp => args[0].eval(n, x, y).exp(),
                Func::Log => args[0].eval(n, x, y).ln(),
                Func::Min => args
                    .iter()
                    .map(|a| a.eval(n, x, y))
                    .fold(f64::INFINITY, nan_min),
                Func::Max => args
                    .iter()
                    .map(|a| a.eval(n, x, y))
                    .fold(f64::NEG_INFINITY, nan_max),
                Func::IfGt => {
                    if args[0].eval(n, x, y) > args[1].eval(n, x, y) {
                        args[2].eval(n, x, y)
                    } else {
                        args[3].eval(n, x, y)
                    }
                }
            },
        }
    }

    fn mentions(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Binary(_, a, b) => a.mentions(v) || b.mentions(v),
            Expr::Call(_, args) => args.iter().any(|a| a.mentions(v)),
        }
    }

    fn collect_guards<'a>(&'a self, out: &mut Vec<(&'a Expr, &'a Expr)>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Binary(_, a, b) => {
                a.collect_guards(out);
                b.collect_guards(out);
            }
            Expr::Call(f, args) => {
                if *f == Func::IfGt {
                    out.push((&args[0], &args[1]));
                }
                for a in args {
                    a.collect_guards(out);
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Binary(BinOp::Pow, ..) => 3,
            _ => 4,
        }
    }
}

// Integer exponents go through powi so that e.g. (-2)^2 stays finite.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn nan_min(acc: f64, v: f64) -> f64 {
    if v.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.min(v)
    }
}

fn nan_max(acc: f64, v: f64) -> f64 {
    if v.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.max(v)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(Var::N) => f.write_str("n"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::Y) => f.write_str("y"),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => " * ",
                    BinOp::Div => " / ",
                    BinOp::Pow => "^",
                };
                // left-associative levels keep the left child bare at equal
                // precedence; `^` only takes atoms on both sides
                let left_paren = if *op == BinOp::Pow {
                    a.precedence() < 4
                } else {
                    a.precedence() < p
                };
                let right_paren = if *op == BinOp::Pow {
                    b.precedence() < 4
                } else {
                    b.precedence() <= p
                };
                wrap(f, a, left_paren)?;
                f.write_str(sym)?;
                wrap(f, b, right_paren)
            }
        }
    }
}

fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(self.syntax(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.syntax(format!("expected `{want}`, found end of input"))),
        }
    }

    fn syntax(&self, msg: String) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.atom()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input".into())),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.ident(),
            Some(c) => Err(self.syntax(format!("unexpected character `{c}`"))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        let mut digits = 0;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
            digits += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            return Err(self.syntax("malformed number".into()));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let exp_start = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j == exp_start {
                self.pos = j;
                return Err(self.syntax("exponent has no digits".into()));
            }
            i = j;
        }
        let text = &self.src[start..i];
        self.pos = i;
        let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
            pos: start,
            msg: format!("bad number `{text}`"),
        })?;
        if !v.is_finite() {
            return Err(ParseError::Syntax {
                pos: start,
                msg: format!("number `{text}` overflows"),
            });
        }
        Ok(Expr::Const(v))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let name = &rest[..len];
        self.pos += len;
        match name {
            "n" => return Ok(Expr::Var(Var::N)),
            "x" => return Ok(Expr::Var(Var::X)),
            "y" => return Ok(Expr::Var(Var::Y)),
            _ => {}
        }
        let Some(func) = Func::lookup(name) else {
            return Err(ParseError::UnknownIdentifier {
                pos: start,
                name: name.to_string(),
            });
        };
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(')')?;
        func.check_arity(args.len())
            .map_err(|expected| ParseError::Arity {
                pos: start,
                name: name.to_string(),
                expected: expected.to_string(),
                got: args.len(),
            })?;
        Ok(Expr::Call(func, args))
    }
}

/// A parsed intensity expression. Serializes as its canonical text.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityExpr {
    root: Expr,
}

impl IntensityExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            root: Expr::Const(c),
        }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    #[inline]
    pub fn eval(&self, s: &StateX) -> f64 {
        self.root.eval(f64::from(s.n), s.x, s.y)
    }

    #[inline]
    pub fn eval_raw(&self, n: f64, x: f64, y: f64) -> f64 {
        self.root.eval(n, x, y)
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.root.mentions(v)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn has_guards(&self) -> bool {
        let mut g = Vec::new();
        self.root.collect_guards(&mut g);
        !g.is_empty()
    }

    /// Points in `(u0, u1)` where some `if_gt` guard flips along the flow
    /// `u -> s.flow(u)`. Found by sign scanning on a uniform sample and
    /// bisection down to a few ulps.
    pub fn breakpoints_along_flow(&self, s: &StateX, u0: f64, u1: f64, out: &mut Vec<f64>) {
        const SAMPLES: usize = 48;
        let mut guards = Vec::new();
        self.root.collect_guards(&mut guards);
        if guards.is_empty() || u1 <= u0 {
            return;
        }
        let n = f64::from(s.n);
        let xdot = if s.n > 0 { 1.0 } else { 0.0 };
        for (a, b) in guards {
            let moving = a.mentions(Var::Y)
                || b.mentions(Var::Y)
                || (xdot > 0.0 && (a.mentions(Var::X) || b.mentions(Var::X)));
            if !moving {
                continue;
            }
            let test =
                |u: f64| a.eval(n, s.x + xdot * u, s.y + u) > b.eval(n, s.x + xdot * u, s.y + u);
            let h = (u1 - u0) / SAMPLES as f64;
            let mut prev_u = u0;
            let mut prev = test(u0);
            for i in 1..=SAMPLES {
                let u = if i == SAMPLES { u1 } else { u0 + h * i as f64 };
                let cur = test(u);
                if cur != prev {
                    let (mut lo, mut hi) = (prev_u, u);
                    while hi - lo > 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                        let mid = 0.5 * (lo + hi);
                        if test(mid) == prev {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let bp = 0.5 * (lo + hi);
                    if bp > u0 && bp < u1 {
                        out.push(bp);
                    }
                }
                prev = cur;
                prev_u = u;
            }
        }
    }
}

impl FromStr for IntensityExpr {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_intensity(text)
    }
}

impl fmt::Display for IntensityExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Serialize for IntensityExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IntensityExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_intensity(&text).map_err(serde::de::Error::custom)
    }
}

pub fn parse_intensity(text: &str) -> Result<IntensityExpr, ParseError> {
    let mut p = Parser { src: text, pos: 0 };
    let root = p.expr()?;
    if let Some(c) = p.peek() {
        return Err(p.syntax(format!("unexpected trailing `{c}`")));
    }
    Ok(IntensityExpr { root })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> IntensityExpr {
        parse_intensity(s).unwrap()
    }

    #[test]
    fn parses_constant() {
        assert_eq!(p("2.0").root, Expr::Const(2.0));
        assert_eq!(p("  1.5e-3 ").root, Expr::Const(1.5e-3));
    }

    #[test]
    fn parses_hazard_shape() {
        let e = p("6/(1+x)");
        let want = Expr::Binary(
            BinOp::Div,
            Box::new(Expr::Const(6.0)),
            Box::new(Expr::Binary(
                BinOp::Add,
                Box::new(Expr::Const(1.0)),
                Box::new(Expr::Var(Var::X)),
            )),
        );
        assert_eq!(e.root, want);
    }

    #[test]
    fn evaluates_examples() {
        let s = StateX {
            n: 5,
            x: 0.0,
            y: 0.0,
        };
        assert!((p("1 + min(n, 3)*0.1").eval(&s) - 1.3).abs() < 1e-12);
        assert_eq!(
            p("2.0").eval(&StateX {
                n: 1,
                x: 0.5,
                y: 0.1
            }),
            2.0
        );
        assert_eq!(
            p("6/(1+x)").eval(&StateX {
                n: 1,
                x: 2.0,
                y: 0.0
            }),
            2.0
        );
        assert_eq!(
            p("6/(1+x)").eval(&StateX {
                n: 1,
                x: 0.0,
                y: 0.0
            }),
            6.0
        );
        let g = p("if_gt(x, 1, 3, 0.5)");
        assert_eq!(
            g.eval(&StateX {
                n: 1,
                x: 1.5,
                y: 0.0
            }),
            3.0
        );
        assert_eq!(
            g.eval(&StateX {
                n: 1,
                x: 1.0,
                y: 0.0
            }),
            0.5
        );
        // `^` is not chainable
        assert!(parse_intensity("2^3^1").is_err());
        assert_eq!(p("(2^3)^2").eval(&s), 64.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let s = StateX {
            n: 2,
            x: 3.0,
            y: 4.0,
        };
        assert_eq!(p("10 - 4 - 3").eval(&s), 3.0);
        assert_eq!(p("24 / 4 / 2").eval(&s), 3.0);
        assert_eq!(p("1 + 2 * x ^ 2").eval(&s), 19.0);
        assert_eq!(p("(1 + 2) * n").eval(&s), 6.0);
        assert_eq!(p("max(n, x, y) - min(n, x, y)").eval(&s), 2.0);
        assert!((p("log(exp(y))").eval(&s) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn reports_errors() {
        assert!(matches!(
            parse_intensity("1 +"),
            Err(ParseError::Syntax { pos: 3, .. })
        ));
        assert!(matches!(
            parse_intensity("z + 1"),
            Err(ParseError::UnknownIdentifier { pos: 0, .. })
        ));
        assert!(matches!(
            parse_intensity("exp(1, 2)"),
            Err(ParseError::Arity { got: 2, .. })
        ));
        assert!(matches!(
            parse_intensity("if_gt(x, 1, 2)"),
            Err(ParseError::Arity { got: 3, .. })
        ));
        assert!(matches!(
            parse_intensity("(x"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_intensity("x y"),
            Err(ParseError::Syntax { pos: 2, .. })
        ));
        assert!(matches!(
            parse_intensity("1e"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_intensity("-1"),
            Err(ParseError::Syntax { pos: 0, .. })
        ));
    }

    #[test]
    fn finds_step_breakpoint() {
        let e = p("if_gt(x, 1, 3, 0.5)");
        let mut bps = Vec::new();
        e.breakpoints_along_flow(
            &StateX {
                n: 1,
                x: 0.3,
                y: 0.0,
            },
            0.0,
            2.0,
            &mut bps,
        );
        assert_eq!(bps.len(), 1);
        assert!((bps[0] - 0.7).abs() < 1e-12);
        // x is frozen while idle
        bps.clear();
        e.breakpoints_along_flow(
            &StateX {
                n: 0,
                x: 0.0,
                y: 0.0,
            },
            0.0,
            2.0,
            &mut bps,
        );
        assert!(bps.is_empty());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|v| Expr::Const(f64::from(v) / 8.0)),
            Just(Expr::Var(Var::N)),
            Just(Expr::Var(Var::X)),
            Just(Expr::Var(Var::Y)),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0..5usize).prop_map(|(a, b, k)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][k];
                    Expr::Binary(op, Box::new(a), Box::new(b))
                }),
                inner.clone().prop_map(|a| Expr::Call(Func::Exp, vec![a])),
                prop::collection::vec(inner.clone(), 1..4).prop_map(|v| Expr::Call(Func::Min, v)),
                prop::collection::vec(inner, 4..=4).prop_map(|v| Expr::Call(Func::IfGt, v)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse_intensity(&printed).unwrap();
            prop_assert_eq!(&reparsed.root, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }
    }
}
