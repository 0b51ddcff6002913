//! Invertible generalized-logistic normalization of raw performance metrics.
//!
//! Raw values are mapped through an affine map `l(x) = a x + b` sending
//! `[l_soft, u_soft]` to `[-1, 1]`, a logistic sigmoid, and a second affine
//! map chosen so that the hard bounds land on exactly 0 and 1. For
//! minimization metrics the result is reflected around 1/2 so that the
//! normalized curve is always "higher is better".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizeError {
    #[error("invalid normalization spec: {0}")]
    InvalidSpec(String),
    #[error("value {value} outside hard bounds [{low}, {high}]")]
    OutOfBounds { value: f64, low: f64, high: f64 },
    #[error("normalized value {0} has no finite preimage")]
    NoPreimage(f64),
    #[error("cannot parse normalization spec: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, NormalizeError>;

/// `(minimize, l_hard, u_hard, l_soft, u_soft)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub minimize: bool,
    pub l_hard: f64,
    pub u_hard: f64,
    pub l_soft: f64,
    pub u_soft: f64,
}

impl NormalizationSpec {
    pub fn new(minimize: bool, l_hard: f64, l_soft: f64, u_soft: f64, u_hard: f64) -> Result<Self> {
        let spec = Self { minimize, l_hard, u_hard, l_soft, u_soft };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity-like spec for curves that already live in `[0, 1]` with
    /// higher-is-better semantics (accuracy).
    pub fn unit_interval() -> Self {
        Self { minimize: false, l_hard: 0.0, u_hard: 1.0, l_soft: 0.0, u_soft: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_hard.is_nan() || self.u_hard.is_nan() {
            return Err(NormalizeError::InvalidSpec("hard bounds must not be NaN".into()));
        }
        if self.l_hard == f64::INFINITY || self.u_hard == f64::NEG_INFINITY {
            return Err(NormalizeError::InvalidSpec("hard bounds point the wrong way".into()));
        }
        if !self.l_soft.is_finite() || !self.u_soft.is_finite() {
            return Err(NormalizeError::InvalidSpec("soft bounds must be finite".into()));
        }
        if self.l_soft >= self.u_soft {
            return Err(NormalizeError::InvalidSpec(format!(
                "l_soft ({}) must be < u_soft ({})",
                self.l_soft, self.u_soft
            )));
        }
        if self.l_hard > self.l_soft || self.u_soft > self.u_hard {
            return Err(NormalizeError::InvalidSpec(format!(
                "need l_hard <= l_soft < u_soft <= u_hard, got ({}, {}, {}, {})",
                self.l_hard, self.l_soft, self.u_soft, self.u_hard
            )));
        }
        Ok(())
    }

    /// Key-value pairs in curve-file metadata form.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("minimize", self.minimize.to_string()),
            ("l_hard", format_bound(self.l_hard)),
            ("u_hard", format_bound(self.u_hard)),
            ("l_soft", format_bound(self.l_soft)),
            ("u_soft", format_bound(self.u_soft)),
        ]
    }

    /// Inverse of [`NormalizationSpec::to_pairs`]; `get` looks a key up.
    pub fn from_lookup<'a, F>(get: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<&'a str>,
    {
        let field = |key: &str| get(key).ok_or_else(|| NormalizeError::Parse(format!("missing key `{key}`")));
        let minimize = match field("minimize")?.trim() {
            "true" | "True" | "1" => true,
            "false" | "False" | "0" => false,
            other => return Err(NormalizeError::Parse(format!("bad boolean `{other}`"))),
        };
        let spec = Self {
            minimize,
            l_hard: parse_bound(field("l_hard")?)?,
            u_hard: parse_bound(field("u_hard")?)?,
            l_soft: parse_bound(field("l_soft")?)?,
            u_soft: parse_bound(field("u_soft")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NormalizationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.minimize,
            format_bound(self.l_hard),
            format_bound(self.l_soft),
            format_bound(self.u_soft),
            format_bound(self.u_hard)
        )
    }
}

/// Formats a bound with `inf` / `-inf` sentinels; finite values round-trip exactly.
pub fn format_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

pub fn parse_bound(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => {
            let v = f64::from_str(other).map_err(|e| NormalizeError::Parse(format!("bad number `{other}`: {e}")))?;
            if v.is_nan() {
                return Err(NormalizeError::Parse("NaN bound".into()));
            }
            Ok(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v == f64::INFINITY {
        1.0
    } else if v == f64::NEG_INFINITY {
        0.0
    } else if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Computes `(a, b, c, d)`. Infinite hard bounds use the sigmoid's limits
/// (0 at `-inf`, 1 at `+inf`), so `c` and `d` are always finite.
pub fn derive_coefficients(spec: &NormalizationSpec) -> Result<TransformCoefficients> {
    spec.validate()?;
    let width = spec.u_soft - spec.l_soft;
    let a = 2.0 / width;
    let b = -(spec.u_soft + spec.l_soft) / width;
    let s_low = sigmoid(a * spec.l_hard + b);
    let s_high = sigmoid(a * spec.u_hard + b);
    let span = s_high - s_low;
    if !(span > 0.0) {
        return Err(NormalizeError::InvalidSpec("hard bounds collapse under the sigmoid".into()));
    }
    let c = 1.0 / span;
    let d = -c * s_low;
    Ok(TransformCoefficients { a, b, c, d })
}

/// A spec with its coefficients precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    spec: NormalizationSpec,
    coeffs: TransformCoefficients,
}

impl Normalizer {
    pub fn new(spec: NormalizationSpec) -> Result<Self> {
        let coeffs = derive_coefficients(&spec)?;
        Ok(Self { spec, coeffs })
    }

    pub fn spec(&self) -> &NormalizationSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &TransformCoefficients {
        &self.coeffs
    }

    #[inline]
    fn reflect(&self, v: f64) -> f64 {
        if self.spec.minimize {
            1.0 - v
        } else {
            v
        }
    }

    /// Raw metric value to normalized `[0, 1]` space.
    pub fn forward(&self, y_raw: f64) -> Result<f64> {
        let s = &self.spec;
        if y_raw.is_nan() || y_raw < s.l_hard || y_raw > s.u_hard {
            return Err(NormalizeError::OutOfBounds { value: y_raw, low: s.l_hard, high: s.u_hard });
        }
        let pre = if y_raw == s.l_hard {
            0.0
        } else if y_raw == s.u_hard {
            1.0
        } else {
            let TransformCoefficients { a, b, c, d } = self.coeffs;
            (c * sigmoid(a * y_raw + b) + d).clamp(0.0, 1.0)
        };
        Ok(self.reflect(pre))
    }

    /// Normalized value back to raw metric space.
    pub fn inverse(&self, y_norm: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y_norm) {
            return Err(NormalizeError::NoPreimage(y_norm));
        }
        let v = self.reflect(y_norm);
        let s = &self.spec;
        if v == 0.0 {
            return if s.l_hard.is_finite() { Ok(s.l_hard) } else { Err(NormalizeError::NoPreimage(y_norm)) };
        }
        if v == 1.0 {
            return if s.u_hard.is_finite() { Ok(s.u_hard) } else { Err(NormalizeError::NoPreimage(y_norm)) };
        }
        let TransformCoefficients { a, b, c, d } = self.coeffs;
        let p = (v - d) / c;
        let x = (logit(p) - b) / a;
        if x.is_nan() {
            return Err(NormalizeError::NoPreimage(y_norm));
        }
        Ok(x.clamp(s.l_hard, s.u_hard))
    }

    pub fn forward_all(&self, ys: &[f64]) -> Result<Vec<f64>> {
        ys.iter().map(|&y| self.forward(y)).collect()
    }
}
