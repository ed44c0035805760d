use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::GramOperator;

/// One generator of the weight operator `R1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Factor {
    /// `B^p`; negative powers act on the retained spectrum only.
    B(f64),
    /// `M0^q = (I - c0 B)^q`.
    M0(f64),
}

/// A product of powers of `B` and `M0`; the empty product is the identity.
/// All factors are functions of `B` and therefore commute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct R1Spec {
    pub factors: Vec<Factor>,
}

impl R1Spec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn b(p: f64) -> Self {
        Self {
            factors: vec![Factor::B(p)],
        }
    }

    pub fn m0(q: f64) -> Self {
        Self {
            factors: vec![Factor::M0(q)],
        }
    }

    pub fn times(mut self, f: Factor) -> Self {
        self.factors.push(f);
        self
    }

    /// The scalar multiplier on an eigenvector of `B` with eigenvalue `l`.
    pub fn scalar(&self, l: f64, significant: bool, c0: f64) -> f64 {
        self.factors.iter().fold(1.0, |acc, f| {
            acc * match *f {
                Factor::B(p) => GramOperator::power_fn(p)(l, significant),
                Factor::M0(q) => (1.0 - c0 * l).powf(q),
            }
        })
    }

    pub fn matrix(&self, gram: &GramOperator, c0: f64) -> DMatrix<f64> {
        if self.factors.is_empty() {
            return DMatrix::identity(gram.dim(), gram.dim());
        }
        gram.spectral_matrix(|l, s| self.scalar(l, s, c0))
    }
}

impl fmt::Display for R1Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("I");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|g| match g {
                Factor::B(p) if *p == 1.0 => "B".to_string(),
                Factor::B(p) => format!("B^{p}"),
                Factor::M0(q) if *q == 1.0 => "M0".to_string(),
                Factor::M0(q) => format!("M0^{q}"),
            })
            .collect();
        f.write_str(&parts.join("*"))
    }
}

fn parse_exponent(s: &str) -> Result<f64> {
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| Error::invalid(format!("bad exponent '{s}'")))?;
            let q: f64 = q.trim().parse().map_err(|_| Error::invalid(format!("bad exponent '{s}'")))?;
            p / q
        }
        None => s.trim().parse().map_err(|_| Error::invalid(format!("bad exponent '{s}'")))?,
    };
    if !v.is_finite() {
        return Err(Error::invalid(format!("bad exponent '{s}'")));
    }
    Ok(v)
}

impl FromStr for R1Spec {
    type Err = Error;

    /// Parses words such as `I`, `B`, `M0^2`, `B^1/2*M0^3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "I" || s.is_empty() {
            return Ok(Self::identity());
        }
        let mut out = Self::identity();
        for tok in s.split('*') {
            let tok = tok.trim();
            let (base, exp) = match tok.split_once('^') {
                Some((b, e)) => (b.trim(), parse_exponent(e.trim_matches(|c| c == '(' || c == ')'))?),
                None => (tok, 1.0),
            };
            let f = match base {
                "B" => Factor::B(exp),
                "M0" => Factor::M0(exp),
                "I" => continue,
                other => return Err(Error::invalid(format!("unknown operator '{other}' in '{s}'"))),
            };
            out.factors.push(f);
        }
        Ok(out)
    }
}

/// The shift `R2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum R2Spec {
    Zero,
    /// `B⁻¹ζ` (truncated pseudo-inverse).
    BinvZeta,
}

impl R2Spec {
    pub fn vector(self, binv_zeta: &[f64]) -> DVector<f64> {
        match self {
            R2Spec::Zero => DVector::zeros(binv_zeta.len()),
            R2Spec::BinvZeta => DVector::from_column_slice(binv_zeta),
        }
    }
}

impl fmt::Display for R2Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            R2Spec::Zero => "0",
            R2Spec::BinvZeta => "Binv_zeta",
        })
    }
}
