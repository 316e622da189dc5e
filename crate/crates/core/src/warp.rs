//! Monotone distance warps `f: [0, ∞) → [0, ∞)` applied before the softmax
//! exponent, with exact derivatives and a small expression grammar.
//!
//! Grammar for a warp pair (whitespace is ignored):
//!
//! ```text
//! pair := side "-" side
//! side := "t"
//!       | "t^" NUM                       power
//!       | NUM "*t"                       scale
//!       | "pwl(" NUM "," NUM "," NUM ["," NUM] ")"
//!                                        alpha, k1, k2, delta
//! ```
//!
//! When the `delta` argument of `pwl` is omitted it defaults to
//! `(1 - k1) * alpha`, which makes `f(alpha) = alpha`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which `Power(p < 1)` derivatives are clamped.
pub const POWER_DERIV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpSpec {
    Identity,
    Power(f64),
    Scale(f64),
    /// Slope `k1` up to `alpha`, slope `k2` after it, shifted up by `delta`.
    PiecewiseLinear {
        alpha: f64,
        k1: f64,
        k2: f64,
        delta: f64,
    },
}

impl WarpSpec {
    pub fn power(p: f64) -> Result<Self> {
        let w = WarpSpec::Power(p);
        w.validate()?;
        Ok(w)
    }

    pub fn scale(c: f64) -> Result<Self> {
        let w = WarpSpec::Scale(c);
        w.validate()?;
        Ok(w)
    }

    pub fn piecewise(alpha: f64, k1: f64, k2: f64, delta: f64) -> Result<Self> {
        let w = WarpSpec::PiecewiseLinear {
            alpha,
            k1,
            k2,
            delta,
        };
        w.validate()?;
        Ok(w)
    }

    /// Piecewise-linear warp with `delta = margin_k * (1 - k1) * alpha`.
    pub fn piecewise_with_margin(alpha: f64, k1: f64, k2: f64, margin_k: f64) -> Result<Self> {
        Self::piecewise(alpha, k1, k2, default_delta(alpha, k1, margin_k)?)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WarpSpec::Identity => Ok(()),
            WarpSpec::Power(p) => positive("exponent", p),
            WarpSpec::Scale(c) => positive("factor", c),
            WarpSpec::PiecewiseLinear {
                alpha,
                k1,
                k2,
                delta,
            } => {
                // alpha = 0 is admitted: it is the "inward everywhere" end of an alpha sweep.
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return Err(Error::param("alpha", format!("must be >= 0, got {alpha}")));
                }
                if !(k1 > 0.0 && k1 < 1.0) {
                    return Err(Error::param("k1", format!("must lie in (0, 1), got {k1}")));
                }
                if !(k2.is_finite() && k2 > 1.0) {
                    return Err(Error::param("k2", format!("must exceed 1, got {k2}")));
                }
                if !(delta.is_finite() && delta >= 0.0) {
                    return Err(Error::param("delta", format!("must be >= 0, got {delta}")));
                }
                Ok(())
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            WarpSpec::PiecewiseLinear { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        check_arg(t)?;
        Ok(self.eval(t))
    }

    pub fn deriv(&self, t: f64) -> Result<f64> {
        check_arg(t)?;
        Ok(self.slope(t))
    }

    /// `value` without the argument check; `t` must be non-negative.
    #[inline]
    pub(crate) fn eval(&self, t: f64) -> f64 {
        match *self {
            WarpSpec::Identity => t,
            WarpSpec::Power(p) => t.powf(p),
            WarpSpec::Scale(c) => c * t,
            WarpSpec::PiecewiseLinear {
                alpha,
                k1,
                k2,
                delta,
            } => {
                if t <= alpha {
                    k1 * t + delta
                } else {
                    k1 * alpha + delta + k2 * (t - alpha)
                }
            }
        }
    }

    /// Derivative; left derivative `k1` at the kink.
    #[inline]
    pub(crate) fn slope(&self, t: f64) -> f64 {
        match *self {
            WarpSpec::Identity => 1.0,
            WarpSpec::Power(p) => p * t.max(POWER_DERIV_FLOOR).powf(p - 1.0),
            WarpSpec::Scale(c) => c,
            WarpSpec::PiecewiseLinear { alpha, k1, k2, .. } => {
                if t <= alpha {
                    k1
                } else {
                    k2
                }
            }
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn check_arg(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeDistance(t))
    }
}

pub fn warp_value(spec: &WarpSpec, t: f64) -> Result<f64> {
    spec.value(t)
}

pub fn warp_deriv(spec: &WarpSpec, t: f64) -> Result<f64> {
    spec.deriv(t)
}

/// Offset that cancels the `k1` handicap at `alpha`, scaled by a margin
/// multiplier `margin_k >= 1`.
pub fn default_delta(alpha: f64, k1: f64, margin_k: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param("alpha", format!("must be >= 0, got {alpha}")));
    }
    if !(k1 > 0.0 && k1 < 1.0) {
        return Err(Error::param("k1", format!("must lie in (0, 1), got {k1}")));
    }
    if !(margin_k.is_finite() && margin_k >= 1.0) {
        return Err(Error::param(
            "margin_k",
            format!("must be >= 1, got {margin_k}"),
        ));
    }
    Ok(margin_k * (1.0 - k1) * alpha)
}

impl fmt::Display for WarpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            WarpSpec::Identity => write!(f, "t"),
            WarpSpec::Power(p) => write!(f, "t^{p}"),
            WarpSpec::Scale(c) => write!(f, "{c}*t"),
            WarpSpec::PiecewiseLinear {
                alpha,
                k1,
                k2,
                delta,
            } => write!(f, "pwl({alpha},{k1},{k2},{delta})"),
        }
    }
}

/// `f1` warps the ground-truth distance, `f2` every negative-class distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WarpPair {
    pub f1: WarpSpec,
    pub f2: WarpSpec,
}

impl WarpPair {
    pub fn new(f1: WarpSpec, f2: WarpSpec) -> Result<Self> {
        f1.validate()?;
        f2.validate()?;
        Ok(WarpPair { f1, f2 })
    }

    pub fn identity() -> Self {
        WarpPair {
            f1: WarpSpec::Identity,
            f2: WarpSpec::Identity,
        }
    }
}

impl fmt::Display for WarpPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.f1, self.f2)
    }
}

impl std::str::FromStr for WarpPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_warp_pair(s)
    }
}

impl TryFrom<String> for WarpPair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_warp_pair(&s)
    }
}

impl From<WarpPair> for String {
    fn from(w: WarpPair) -> Self {
        w.to_string()
    }
}

pub fn parse_warp_pair(expr: &str) -> Result<WarpPair> {
    let mut p = Parser::new(expr);
    let (f1, at1) = p.side()?;
    p.expect(b'-')?;
    let (f2, at2) = p.side()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    f1.validate().map_err(|e| parse_err(at1, e))?;
    f2.validate().map_err(|e| parse_err(at2, e))?;
    Ok(WarpPair { f1, f2 })
}

/// Parses one side of the grammar, e.g. `"t^0.5"`.
pub fn parse_warp(expr: &str) -> Result<WarpSpec> {
    let mut p = Parser::new(expr);
    let (w, at) = p.side()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    w.validate().map_err(|e| parse_err(at, e))?;
    Ok(w)
}

fn parse_err(position: usize, e: Error) -> Error {
    Error::Parse {
        position,
        message: e.to_string(),
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            src: s.as_bytes(),
            pos: 0,
        }
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            position: self.pos,
            message: msg.into(),
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

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(kw.as_bytes()) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        let digits = |i: &mut usize| {
            let from = *i;
            while *i < s.len() && s[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > from
        };
        let mut any = digits(&mut i);
        if i < s.len() && s[i] == b'.' {
            i += 1;
            any |= digits(&mut i);
        }
        if !any {
            return Err(self.error("expected a number"));
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) {
                i = j;
            }
        }
        self.pos = i;
        let text = std::str::from_utf8(&s[start..i]).expect("ascii");
        text.parse::<f64>().map_err(|e| Error::Parse {
            position: start,
            message: e.to_string(),
        })
    }

    fn side(&mut self) -> Result<(WarpSpec, usize)> {
        self.skip_ws();
        let at = self.pos;
        let w = match self.peek() {
            Some(b't') => {
                self.pos += 1;
                if self.eat(b'^') {
                    WarpSpec::Power(self.number()?)
                } else {
                    WarpSpec::Identity
                }
            }
            Some(b'p') => {
                if !self.keyword("pwl") {
                    return Err(self.error("expected 't', a number or 'pwl('"));
                }
                self.expect(b'(')?;
                let alpha = self.number()?;
                self.expect(b',')?;
                let k1 = self.number()?;
                self.expect(b',')?;
                let k2 = self.number()?;
                let delta = if self.eat(b',') {
                    self.number()?
                } else {
                    // Fall back to the handicap-cancelling offset; range errors surface in validate.
                    (1.0 - k1) * alpha
                };
                self.expect(b')')?;
                WarpSpec::PiecewiseLinear {
                    alpha,
                    k1,
                    k2,
                    delta,
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let c = self.number()?;
                self.eat(b'*');
                if !self.eat(b't') {
                    return Err(self.error("expected 't' after scale factor"));
                }
                WarpSpec::Scale(c)
            }
            _ => return Err(self.error("expected 't', a number or 'pwl('")),
        };
        Ok((w, at))
    }
}
