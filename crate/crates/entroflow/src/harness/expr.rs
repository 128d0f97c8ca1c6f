//! The small expression language for configured fields.
//!
//! Weights and initial data are given as strings like "1 + 0.5*cos(2 pi x)"
//! or "gauss(0.15, 0.5, 0.1)". The grammar has numbers, the names x, y and
//! pi, the functions cos, sin and gauss, the operators + - *, parentheses,
//! and multiplication by juxtaposition ("2 pi x").
//!
//! Weights are sampled pointwise, so any expression goes. Initial data must
//! fold symbolically into a short sum of pure Fourier modes: cos/sin
//! arguments have to be zero-phase integer multiples of 2 pi x (and y), and
//! products of modes, gaussians, or bare coordinates are rejected. That
//! keeps configured starting states band-limited by construction, with an
//! exact spectral meaning independent of the grid.

use crate::torusfield::{Grid, ScalarField};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("unexpected character '{0}' in expression")]
    BadChar(char),
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("unknown name '{0}' (allowed: x, y, pi, cos, sin, gauss)")]
    UnknownName(String),
    #[error("expected {expected}, found {found}")]
    Unexpected { expected: String, found: String },
    #[error("'{0}' expects {1} arguments, got {2}")]
    Arity(&'static str, String, usize),
    #[error("'y' only makes sense on a two-dimensional grid")]
    YInOneDim,
    #[error("gauss width must be positive, got {0}")]
    BadWidth(f64),
    #[error("initial data must be a sum of pure modes: {0}")]
    NotModal(String),
    #[error("cos/sin argument must be an integer multiple of 2 pi x (and y): {0}")]
    BadFrequency(String),
    #[error("mode ({0}, {1}) exceeds the resolvable band |k| <= n/2 - 1 = {2}")]
    ModeOutOfBand(i64, i64, i64),
    #[error("initial data folds to {0} modes, more than the limit of 8")]
    TooManyModes(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "number {v}"),
            Token::Name(s) => write!(f, "'{s}'"),
            Token::Plus => write!(f, "'+'"),
            Token::Minus => write!(f, "'-'"),
            Token::Star => write!(f, "'*'"),
            Token::LParen => write!(f, "'('"),
            Token::RParen => write!(f, "')'"),
            Token::Comma => write!(f, "','"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ExprError::BadNumber(text.to_string()))?;
                out.push(Token::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push(Token::Name(src[start..i].to_ascii_lowercase()));
            }
            other => return Err(ExprError::BadChar(other)),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    X,
    Y,
    Pi,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Cos(Box<Expr>),
    Sin(Box<Expr>),
    Gauss(Vec<Expr>),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token) -> Result<(), ExprError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(ExprError::Unexpected {
                expected: want.to_string(),
                found: other.map_or("end of expression".into(), |t| t.to_string()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(tok) = self.peek() {
            match tok {
                Token::Plus => {
                    self.next();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.next();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    /// A product: explicit '*' or juxtaposition ("2 pi x").
    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.next();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Num(_)) | Some(Token::Name(_)) | Some(Token::LParen) => {
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.atom()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if matches!(self.peek(), Some(Token::Plus)) {
            self.next();
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Name(name)) => match name.as_str() {
                "x" => Ok(Expr::X),
                "y" => Ok(Expr::Y),
                "pi" => Ok(Expr::Pi),
                "cos" | "sin" | "gauss" => {
                    self.expect(Token::LParen)?;
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(Token::Comma)) {
                        self.next();
                        args.push(self.expr()?);
                    }
                    self.expect(Token::RParen)?;
                    match name.as_str() {
                        "cos" => {
                            if args.len() != 1 {
                                return Err(ExprError::Arity("cos", "1".into(), args.len()));
                            }
                            Ok(Expr::Cos(Box::new(args.pop().unwrap())))
                        }
                        "sin" => {
                            if args.len() != 1 {
                                return Err(ExprError::Arity("sin", "1".into(), args.len()));
                            }
                            Ok(Expr::Sin(Box::new(args.pop().unwrap())))
                        }
                        _ => Ok(Expr::Gauss(args)),
                    }
                }
                other => Err(ExprError::UnknownName(other.to_string())),
            },
            other => Err(ExprError::Unexpected {
                expected: "a value".into(),
                found: other.map_or("end of expression".into(), |t| t.to_string()),
            }),
        }
    }
}

fn parse(src: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(ExprError::Unexpected {
            expected: "an expression".into(),
            found: "empty string".into(),
        });
    }
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(t) => Err(ExprError::Unexpected {
            expected: "end of expression".into(),
            found: t.to_string(),
        }),
    }
}

/// Periodized gaussian bump, unit peak before the floor is added. The image
/// sum is truncated at |m| <= 8, far below roundoff for any width < 1.
fn periodized_gauss(coord: f64, center: f64, sigma: f64) -> f64 {
    let mut s = 0.0;
    for m in -8i32..=8 {
        let d = coord - center + m as f64;
        s += (-d * d / (2.0 * sigma * sigma)).exp();
    }
    s
}

fn eval_point(e: &Expr, x: f64, y: f64, dim: usize) -> Result<f64, ExprError> {
    Ok(match e {
        Expr::Num(v) => *v,
        Expr::X => x,
        Expr::Y => {
            if dim < 2 {
                return Err(ExprError::YInOneDim);
            }
            y
        }
        Expr::Pi => PI,
        Expr::Neg(a) => -eval_point(a, x, y, dim)?,
        Expr::Add(a, b) => eval_point(a, x, y, dim)? + eval_point(b, x, y, dim)?,
        Expr::Sub(a, b) => eval_point(a, x, y, dim)? - eval_point(b, x, y, dim)?,
        Expr::Mul(a, b) => eval_point(a, x, y, dim)? * eval_point(b, x, y, dim)?,
        Expr::Cos(a) => eval_point(a, x, y, dim)?.cos(),
        Expr::Sin(a) => eval_point(a, x, y, dim)?.sin(),
        Expr::Gauss(args) => {
            // gauss(sigma, cx, floor) in 1D; gauss(sigma, cx, cy, floor) in 2D.
            let want = if dim == 1 { 3 } else { 4 };
            if args.len() != want {
                return Err(ExprError::Arity(
                    "gauss",
                    format!("{want} (sigma, center{}, floor)", if dim == 2 { "s" } else { "" }),
                    args.len(),
                ));
            }
            let vals: Vec<f64> = args
                .iter()
                .map(|a| eval_point(a, x, y, dim))
                .collect::<Result<_, _>>()?;
            let sigma = vals[0];
            if !(sigma > 0.0) {
                return Err(ExprError::BadWidth(sigma));
            }
            let floor = *vals.last().unwrap();
            let mut v = periodized_gauss(x, vals[1], sigma);
            if dim == 2 {
                v *= periodized_gauss(y, vals[2], sigma);
            }
            floor + v
        }
    })
}

/// Parse and sample a weight expression on the grid.
pub fn sample_field(src: &str, grid: Grid) -> Result<ScalarField, ExprError> {
    let ast = parse(src)?;
    let mut values = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let (x, y) = grid.coords(idx);
        values.push(eval_point(&ast, x, y, grid.dim())?);
    }
    Ok(ScalarField::from_values(grid, values).expect("length matches grid"))
}

/// One pure mode: amp * cos or sin of 2 pi (kx x + ky y).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub amp: f64,
    pub kx: i64,
    pub ky: i64,
    pub sin: bool,
}

/// Symbolic values for the initial-data fold.
#[derive(Clone, Debug)]
enum Sym {
    Const(f64),
    /// c + a x + b y; only ever legal inside a cos/sin argument.
    Lin { c: f64, a: f64, b: f64 },
    /// c + sum of modes.
    Trig { c: f64, modes: Vec<Mode> },
}

fn fold(e: &Expr, dim: usize) -> Result<Sym, ExprError> {
    use Sym::*;
    let not_modal = |what: &str| Err(ExprError::NotModal(what.to_string()));
    Ok(match e {
        Expr::Num(v) => Const(*v),
        Expr::Pi => Const(PI),
        Expr::X => Lin { c: 0.0, a: 1.0, b: 0.0 },
        Expr::Y => {
            if dim < 2 {
                return Err(ExprError::YInOneDim);
            }
            Lin { c: 0.0, a: 0.0, b: 1.0 }
        }
        Expr::Neg(inner) => match fold(inner, dim)? {
            Const(v) => Const(-v),
            Lin { c, a, b } => Lin { c: -c, a: -a, b: -b },
            Trig { c, modes } => Trig {
                c: -c,
                modes: modes
                    .into_iter()
                    .map(|m| Mode { amp: -m.amp, ..m })
                    .collect(),
            },
        },
        Expr::Add(lhs, rhs) | Expr::Sub(lhs, rhs) => {
            let sign = if matches!(e, Expr::Sub(..)) { -1.0 } else { 1.0 };
            let l = fold(lhs, dim)?;
            let r = match fold(rhs, dim)? {
                Const(v) => Const(sign * v),
                Lin { c, a, b } => Lin { c: sign * c, a: sign * a, b: sign * b },
                Trig { c, modes } => Trig {
                    c: sign * c,
                    modes: modes
                        .into_iter()
                        .map(|m| Mode { amp: sign * m.amp, ..m })
                        .collect(),
                },
            };
            match (l, r) {
                (Const(u), Const(v)) => Const(u + v),
                (Const(u), Lin { c, a, b }) | (Lin { c, a, b }, Const(u)) => {
                    Lin { c: c + u, a, b }
                }
                (Const(u), Trig { c, modes }) | (Trig { c, modes }, Const(u)) => {
                    Trig { c: c + u, modes }
                }
                (Trig { c: c1, modes: mut m1 }, Trig { c: c2, modes: m2 }) => {
                    m1.extend(m2);
                    Trig { c: c1 + c2, modes: m1 }
                }
                (Lin { c: c1, a: a1, b: b1 }, Lin { c: c2, a: a2, b: b2 }) => Lin {
                    c: c1 + c2,
                    a: a1 + a2,
                    b: b1 + b2,
                },
                _ => return not_modal("cannot add a bare coordinate to a mode"),
            }
        }
        Expr::Mul(lhs, rhs) => {
            let l = fold(lhs, dim)?;
            let r = fold(rhs, dim)?;
            let (s, other) = match (l, r) {
                (Const(s), o) | (o, Const(s)) => (s, o),
                _ => {
                    return not_modal(
                        "products of coordinates or modes are not pure modes",
                    )
                }
            };
            match other {
                Const(v) => Const(s * v),
                Lin { c, a, b } => Lin { c: s * c, a: s * a, b: s * b },
                Trig { c, modes } => Trig {
                    c: s * c,
                    modes: modes
                        .into_iter()
                        .map(|m| Mode { amp: s * m.amp, ..m })
                        .collect(),
                },
            }
        }
        Expr::Cos(arg) | Expr::Sin(arg) => {
            let is_sin = matches!(e, Expr::Sin(..));
            match fold(arg, dim)? {
                Const(v) => Const(if is_sin { v.sin() } else { v.cos() }),
                Lin { c, a, b } => {
                    if c.abs() > 1e-9 {
                        return Err(ExprError::BadFrequency(format!(
                            "phase offset {c:.3e} is not zero"
                        )));
                    }
                    let kx = a / (2.0 * PI);
                    let ky = b / (2.0 * PI);
                    let (rkx, rky) = (kx.round(), ky.round());
                    if (kx - rkx).abs() > 1e-9 || (ky - rky).abs() > 1e-9 {
                        return Err(ExprError::BadFrequency(format!(
                            "frequency ({kx:.6}, {ky:.6}) per 2 pi is not integral"
                        )));
                    }
                    Trig {
                        c: 0.0,
                        modes: vec![Mode {
                            amp: 1.0,
                            kx: rkx as i64,
                            ky: rky as i64,
                            sin: is_sin,
                        }],
                    }
                }
                Trig { .. } => not_modal("cos/sin of a mode is not a pure mode")?,
            }
        }
        Expr::Gauss(_) => not_modal("a gaussian bump is not a pure mode")?,
    })
}

/// Fold an initial-data expression into its mode list. Equal frequencies
/// merge, zero-frequency terms fold into the discarded constant offset, and
/// every surviving mode must fit strictly inside the resolvable band.
pub fn parse_modes(src: &str, grid: Grid) -> Result<Vec<Mode>, ExprError> {
    let ast = parse(src)?;
    let (mut c, raw) = match fold(&ast, grid.dim())? {
        Sym::Const(v) => (v, Vec::new()),
        Sym::Trig { c, modes } => (c, modes),
        Sym::Lin { .. } => {
            return Err(ExprError::NotModal(
                "a bare linear function of the coordinates is not periodic".into(),
            ))
        }
    };

    let mut merged: Vec<Mode> = Vec::new();
    for m in raw {
        if m.kx == 0 && m.ky == 0 {
            // cos(0) = 1 folds into the constant, sin(0) = 0 vanishes.
            if !m.sin {
                c += m.amp;
            }
            continue;
        }
        match merged
            .iter_mut()
            .find(|e| e.kx == m.kx && e.ky == m.ky && e.sin == m.sin)
        {
            Some(e) => e.amp += m.amp,
            None => merged.push(m),
        }
    }
    merged.retain(|m| m.amp != 0.0);
    let _ = c; // constant offsets are projected away by the caller

    if merged.len() > 8 {
        return Err(ExprError::TooManyModes(merged.len()));
    }
    let band = grid.n() as i64 / 2 - 1;
    for m in &merged {
        if m.kx.abs() > band || m.ky.abs() > band {
            return Err(ExprError::ModeOutOfBand(m.kx, m.ky, band));
        }
        if grid.dim() == 1 && m.ky != 0 {
            return Err(ExprError::YInOneDim);
        }
    }
    Ok(merged)
}

/// Sample a mode list on the grid (the constant offset is already gone).
pub fn field_from_modes(modes: &[Mode], grid: Grid) -> ScalarField {
    let modes = modes.to_vec();
    ScalarField::from_fn(grid, move |x, y| {
        let mut s = 0.0;
        for m in &modes {
            let phase = 2.0 * PI * (m.kx as f64 * x + m.ky as f64 * y);
            s += m.amp * if m.sin { phase.sin() } else { phase.cos() };
        }
        s
    })
}
