//! Problem description: dimensions, target exponents, width index and the
//! family of weighted balls, all exponents held in reciprocal coordinates.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on reciprocal coordinates used unless overridden.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("width index out of range: {0}")]
    IndexError(String),
}

/// A point `x` of `[0,1]^d` with `x_i = 1/p_i` (`0` encodes `p_i = inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalVector(Vec<f64>);

impl ReciprocalVector {
    pub fn new(x: Vec<f64>) -> Result<Self, ProblemError> {
        if x.is_empty() {
            return Err(ProblemError::DimensionMismatch(
                "reciprocal vector must have at least one coordinate".into(),
            ));
        }
        if let Some((i, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ProblemError::RangeError(format!(
                "reciprocal coordinate {i} = {v} is outside [0, 1]"
            )));
        }
        Ok(Self(x))
    }

    /// Builds from a convex combination or similar computation whose result
    /// may overshoot `[0,1]` by rounding; clamps instead of rejecting.
    pub(crate) fn clamped(x: Vec<f64>) -> Self {
        Self(x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The exponents `p_i = 1/x_i`, with `inf` for `x_i = 0`.
    pub fn to_p(&self) -> Vec<f64> {
        self.0
            .iter()
            .map(|&x| if x == 0.0 { f64::INFINITY } else { 1.0 / x })
            .collect()
    }
}

impl std::ops::Index<usize> for ReciprocalVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Maps user-facing exponents `p in [1, inf]` to reciprocal coordinates.
pub fn reciprocal_of_p(p_values: &[f64]) -> Result<ReciprocalVector, ProblemError> {
    let x = p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p.is_nan() || p < 1.0 {
                Err(ProblemError::RangeError(format!(
                    "exponent p[{i}] = {p} must lie in [1, inf]"
                )))
            } else if p == f64::INFINITY {
                Ok(0.0)
            } else {
                Ok(1.0 / p)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ReciprocalVector::new(x)
}

/// One ball `nu * B^k_p` of the intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec {
    pub nu: f64,
    pub p: ReciprocalVector,
}

impl BallSpec {
    pub fn new(nu: f64, p: ReciprocalVector) -> Self {
        Self { nu, p }
    }

    /// Convenience constructor from exponents `p` (may contain `f64::INFINITY`).
    pub fn from_p(nu: f64, p: &[f64]) -> Result<Self, ProblemError> {
        Ok(Self {
            nu,
            p: reciprocal_of_p(p)?,
        })
    }

    pub fn log_nu(&self) -> f64 {
        self.nu.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub k: Vec<u64>,
    pub q: Vec<f64>,
    pub n: u64,
    pub balls: Vec<BallSpec>,
}

impl ProblemSpec {
    pub fn new(k: Vec<u64>, q: Vec<f64>, n: u64, balls: Vec<BallSpec>) -> Self {
        Self { k, q, n, balls }
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// `floor(prod k_i / 2)`, saturating.
    pub fn max_n(&self) -> u128 {
        self.k.iter().fold(1u128, |acc, &k| acc.saturating_mul(k as u128)) / 2
    }

    /// Checks every invariant without changing the problem.
    pub fn check(&self) -> Result<(), ProblemError> {
        let d = self.k.len();
        if d == 0 {
            return Err(ProblemError::DimensionMismatch("k must be nonempty".into()));
        }
        if self.q.len() != d {
            return Err(ProblemError::DimensionMismatch(format!(
                "q has {} entries, k has {d}",
                self.q.len()
            )));
        }
        if self.balls.is_empty() {
            return Err(ProblemError::DimensionMismatch(
                "the ball family must be nonempty".into(),
            ));
        }
        for (a, ball) in self.balls.iter().enumerate() {
            if ball.p.dim() != d {
                return Err(ProblemError::DimensionMismatch(format!(
                    "ball {a} has {} exponents, k has {d}",
                    ball.p.dim()
                )));
            }
        }
        if let Some((i, _)) = self.k.iter().enumerate().find(|(_, &k)| k == 0) {
            return Err(ProblemError::RangeError(format!("k[{i}] must be >= 1")));
        }
        if let Some((i, q)) = self.q.iter().enumerate().find(|(_, q)| !(q.is_finite() && **q >= 2.0)) {
            return Err(ProblemError::RangeError(format!(
                "q[{i}] = {q} must be finite and >= 2"
            )));
        }
        for (a, ball) in self.balls.iter().enumerate() {
            if !(ball.nu.is_finite() && ball.nu > 0.0) {
                return Err(ProblemError::RangeError(format!(
                    "ball {a}: nu = {} must be positive",
                    ball.nu
                )));
            }
            // ReciprocalVector construction already enforces [0,1], but the
            // field is public through BallSpec.
            ReciprocalVector::new(ball.p.as_slice().to_vec())?;
        }
        let max_n = self.max_n();
        if self.n == 0 || self.n as u128 > max_n {
            return Err(ProblemError::IndexError(format!("n = {} outside [1, {max_n}]", self.n)));
        }
        Ok(())
    }

    /// Checks the problem and removes exact duplicate balls (same `nu` and
    /// same exponents). Dominated balls are kept.
    pub fn validate(&self) -> Result<ProblemSpec, ProblemError> {
        self.check()?;
        let mut balls: Vec<BallSpec> = Vec::with_capacity(self.balls.len());
        for ball in &self.balls {
            if !balls.iter().any(|b| b == ball) {
                balls.push(ball.clone());
            }
        }
        Ok(ProblemSpec { balls, ..self.clone() })
    }

    pub fn with_n(&self, n: u64) -> ProblemSpec {
        ProblemSpec { n, ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<ProblemSpec, ProblemFileError> {
        let file: ProblemFile = serde_json::from_str(text)?;
        Ok(file.into_spec()?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&ProblemFile::from_spec(self))
            .expect("problem file serialization cannot fail");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum ProblemFileError {
    #[error("malformed problem file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ProblemError),
}

/// One exponent as written in a problem file: a number or the token `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FileExponent(pub f64);

impl Serialize for FileExponent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for FileExponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = FileExponent;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<FileExponent, E> {
                Ok(FileExponent(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<FileExponent, E> {
                Ok(FileExponent(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<FileExponent, E> {
                Ok(FileExponent(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<FileExponent, E> {
                if v == "inf" {
                    Ok(FileExponent(f64::INFINITY))
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallFile {
    pub nu: f64,
    pub p: Vec<FileExponent>,
}

/// On-disk JSON layout of a problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub k: Vec<u64>,
    pub q: Vec<f64>,
    pub n: u64,
    pub balls: Vec<BallFile>,
}

impl ProblemFile {
    pub fn into_spec(self) -> Result<ProblemSpec, ProblemError> {
        let balls = self
            .balls
            .into_iter()
            .map(|b| {
                let p: Vec<f64> = b.p.iter().map(|e| e.0).collect();
                BallSpec::from_p(b.nu, &p)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProblemSpec::new(self.k, self.q, self.n, balls))
    }

    pub fn from_spec(spec: &ProblemSpec) -> Self {
        ProblemFile {
            k: spec.k.clone(),
            q: spec.q.clone(),
            n: spec.n,
            balls: spec
                .balls
                .iter()
                .map(|b| BallFile {
                    nu: b.nu,
                    p: b.p.to_p().into_iter().map(FileExponent).collect(),
                })
                .collect(),
        }
    }
}
