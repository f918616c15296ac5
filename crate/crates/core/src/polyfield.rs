//! Sparse multivariate polynomials over group coordinates.
//!
//! Coefficients are `f64`. Terms whose coefficient becomes exactly `0.0` are
//! dropped after every operation and nothing is ever removed by a magnitude
//! threshold, so a cancellation that is supposed to be exact shows up as the
//! literal zero polynomial and a failed one stays visible. Identities built
//! from small integer coefficients (commutators, the sub-Laplacian of a
//! half-space distance) cancel exactly; callers supplying irrational
//! coefficients get floating-point cancellation only.
//!
//! The textual notation is a sum of terms such as `2*x2 - 3.5*x1^2*x3 + 1`.
//! Variables are `x1..xn` (1-based). [`Polynomial::parse`] accepts what the
//! `Display` impl prints.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// Exponent multi-index, one entry per variable.
pub type Exponents = Vec<u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Exponents, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `x_{index+1}` (0-based index).
    pub fn var(nvars: usize, index: usize) -> Result<Self, PolyError> {
        if index >= nvars {
            return Err(PolyError::IndexOutOfRange { index, nvars });
        }
        let mut e = vec![0; nvars];
        e[index] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, 1.0);
        Ok(p)
    }

    pub fn monomial(exponents: Exponents, coeff: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, coeff);
        p
    }

    /// Builds a polynomial from `(exponents, coeff)` pairs; repeated exponents accumulate.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Exponents, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(PolyError::DimensionMismatch {
                    expected: nvars,
                    found: e.len(),
                });
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn coeff(&self, exponents: &[u32]) -> f64 {
        self.terms.get(exponents).copied().unwrap_or(0.0)
    }

    /// Returns `Some(c)` if the polynomial is the constant `c` (zero included).
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (e, &c) = self.terms.iter().next()?;
                e.iter().all(|&k| k == 0).then_some(c)
            }
            _ => None,
        }
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    /// True when no term has a positive exponent on any variable with index `>= first`.
    pub fn independent_of_vars_from(&self, first: usize) -> bool {
        self.terms
            .keys()
            .all(|e| e.iter().skip(first).all(|&k| k == 0))
    }

    fn add_term(&mut self, e: Exponents, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(e);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check_same(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the length check. `x` must have at least `nvars` entries.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, &c)| {
                e.iter()
                    .zip(x)
                    .filter(|(&k, _)| k > 0)
                    .fold(c, |acc, (&k, &xi)| acc * xi.powi(k as i32))
            })
            .sum()
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.checked_add(&other.scale(-1.0))
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same(other)?;
        let mut out = Self::zero(self.nvars);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, &v) in &self.terms {
            out.add_term(e.clone(), v * c);
        }
        out
    }

    /// Exact partial derivative with respect to variable `index` (0-based).
    pub fn partial(&self, index: usize) -> Result<Self, PolyError> {
        if index >= self.nvars {
            return Err(PolyError::IndexOutOfRange {
                index,
                nvars: self.nvars,
            });
        }
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            let k = e[index];
            if k == 0 {
                continue;
            }
            let mut d = e.clone();
            d[index] = k - 1;
            out.add_term(d, c * k as f64);
        }
        Ok(out)
    }

    pub fn parse(text: &str, nvars: usize) -> Result<Self, PolyError> {
        Parser::new(text, nvars).parse()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (e, &c)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            match (n, c < 0.0) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            let factors: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(i, &k)| {
                    if k == 1 {
                        format!("x{}", i + 1)
                    } else {
                        format!("x{}^{}", i + 1, k)
                    }
                })
                .collect();
            if factors.is_empty() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{mag}*{}", factors.join("*"))?;
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, nvars: usize) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
            nvars,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PolyError> {
        Err(PolyError::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
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

    fn parse(mut self) -> Result<Polynomial, PolyError> {
        let mut out = Polynomial::zero(self.nvars);
        let mut first = true;
        loop {
            let sign = match self.peek() {
                None if first => return self.err("empty polynomial"),
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    1.0
                }
                Some(b'-') => {
                    self.pos += 1;
                    -1.0
                }
                Some(_) if first => 1.0,
                Some(c) => return self.err(format!("expected '+' or '-', found '{}'", c as char)),
            };
            first = false;
            let (e, c) = self.term()?;
            out.add_term(e, sign * c);
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<(Exponents, f64), PolyError> {
        let mut e = vec![0u32; self.nvars];
        let mut c = 1.0;
        loop {
            match self.peek() {
                Some(b'x') => {
                    self.pos += 1;
                    let idx = self.integer()? as usize;
                    if idx == 0 || idx > self.nvars {
                        return self
                            .err(format!("variable x{idx} out of range 1..={}", self.nvars));
                    }
                    let mut k = 1;
                    if self.peek() == Some(b'^') {
                        self.pos += 1;
                        k = u32::try_from(self.integer()?)
                            .or_else(|_| self.err("exponent too large"))?;
                    }
                    e[idx - 1] += k;
                }
                Some(ch) if ch.is_ascii_digit() || ch == b'.' => c *= self.number()?,
                Some(ch) => return self.err(format!("unexpected '{}'", ch as char)),
                None => return self.err("unexpected end of input"),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                return Ok((e, c));
            }
        }
    }

    fn integer(&mut self) -> Result<u64, PolyError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        s.parse().or_else(|_| self.err("expected integer"))
    }

    fn number(&mut self) -> Result<f64, PolyError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && (p.src[p.pos].is_ascii_digit() || p.src[p.pos] == b'.') {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            digits(self);
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => self.err(format!("invalid number '{s}'")),
        }
    }
}
