//! Step-size and frequency expressions.
//!
//! ```text
//! c0 := <rational>*c/M | <rational>*c/n | <rational>*c | <rational>
//!     | <rational>*c/(<rational>M) | <rational>*c/(<rational>n)
//! M  := <rational>*n | <integer>
//! rational := decimal | p/q
//! ```
//!
//! The `*` and a unit coefficient may be omitted (`c/M`, `2c/n`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{input, CliError, Result};

fn parse_rational(s: &str) -> Result<f64> {
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| input(format!("bad number '{p}'")))?;
            let q: f64 = q.trim().parse().map_err(|_| input(format!("bad number '{q}'")))?;
            p / q
        }
        None => s.trim().parse().map_err(|_| input(format!("bad number '{s}'")))?,
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(input(format!("'{s}' must be a positive number")));
    }
    Ok(v)
}

fn coefficient(prefix: &str) -> Result<f64> {
    let p = prefix.trim().trim_end_matches('*').trim();
    if p.is_empty() {
        Ok(1.0)
    } else {
        parse_rational(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StepBase {
    Literal,
    C,
    COverM,
    COverN,
}

/// A step size relative to the reference step `c` of the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StepExpr {
    text: String,
    coef: f64,
    base: StepBase,
}

impl StepExpr {
    /// Evaluates with reference step `c`, `n` rows and frequency `m_freq`.
    pub fn evaluate(&self, c: f64, n: usize, m_freq: Option<usize>) -> Result<f64> {
        let v = match self.base {
            StepBase::Literal => self.coef,
            StepBase::C => self.coef * c,
            StepBase::COverN => self.coef * c / n as f64,
            StepBase::COverM => {
                let m = m_freq.ok_or_else(|| input(format!("'{}' needs a frequency M", self.text)))?;
                self.coef * c / m as f64
            }
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(input(format!("step '{}' evaluates to {v}", self.text)));
        }
        Ok(v)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl FromStr for StepExpr {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let text: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let Some((prefix, tail)) = text.split_once('c') else {
            return Ok(Self {
                coef: parse_rational(&text)?,
                text,
                base: StepBase::Literal,
            });
        };
        let mut coef = coefficient(prefix)?;
        let denom = match tail {
            "" => None,
            t => Some(
                t.strip_prefix('/')
                    .ok_or_else(|| input(format!("bad step expression '{text}'")))?,
            ),
        };
        let base = match denom {
            None => StepBase::C,
            Some(d) => {
                let d = d.strip_prefix('(').and_then(|d| d.strip_suffix(')')).unwrap_or(d);
                let (k, base) = if let Some(k) = d.strip_suffix('M') {
                    (k, StepBase::COverM)
                } else if let Some(k) = d.strip_suffix('n') {
                    (k, StepBase::COverN)
                } else {
                    return Err(input(format!("bad step expression '{text}'")));
                };
                coef /= coefficient(k)?;
                base
            }
        };
        Ok(Self { coef, base, text })
    }
}

impl TryFrom<String> for StepExpr {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StepExpr> for String {
    fn from(e: StepExpr) -> String {
        e.text
    }
}

impl fmt::Display for StepExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// SVRG frequency, absolute or relative to `n` (rounded, at least 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "String")]
pub struct FreqExpr {
    text: String,
    fraction_of_n: Option<f64>,
    value: usize,
}

impl FreqExpr {
    pub fn resolve(&self, n: usize) -> usize {
        match self.fraction_of_n {
            Some(r) => ((r * n as f64).round() as usize).max(1),
            None => self.value,
        }
    }
}

impl FromStr for FreqExpr {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let text: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(p) = text.strip_suffix('n') {
            return Ok(Self {
                fraction_of_n: Some(coefficient(p)?),
                value: 0,
                text,
            });
        }
        let value: usize = text.parse().map_err(|_| input(format!("bad frequency '{text}'")))?;
        if value == 0 {
            return Err(input("M must be at least 1"));
        }
        Ok(Self {
            text,
            fraction_of_n: None,
            value,
        })
    }
}

impl TryFrom<serde_json::Value> for FreqExpr {
    type Error = CliError;

    fn try_from(v: serde_json::Value) -> Result<Self> {
        match v {
            serde_json::Value::String(s) => s.parse(),
            serde_json::Value::Number(n) => n.to_string().parse(),
            other => Err(input(format!("M must be a string or integer, got {other}"))),
        }
    }
}

impl From<FreqExpr> for String {
    fn from(e: FreqExpr) -> String {
        e.text
    }
}

impl fmt::Display for FreqExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}
