//! Homogeneous risk functionals defining what counts as an extreme event.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent used by [`RiskFunctional::SmoothMax`].
pub const SMOOTH_MAX_EXPONENT: f64 = 20.0;

/// A nonnegative functional homogeneous of order one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskFunctional {
    /// `(Σ x_i^p)^{1/p}`.
    PowerSum {
        exponent: f64,
    },
    Sum,
    /// Power sum with exponent 20, a differentiable stand-in for the maximum.
    SmoothMax,
    /// Value at one site.
    Site {
        index: usize,
    },
    /// `min_i x_i`.
    MinRatio,
    /// `max_i x_i`.
    Max,
}

impl RiskFunctional {
    pub fn power_sum(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Domain(format!(
                "power-sum exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self::PowerSum { exponent })
    }

    fn exponent(&self) -> Option<f64> {
        match self {
            Self::PowerSum { exponent } => Some(*exponent),
            Self::SmoothMax => Some(SMOOTH_MAX_EXPONENT),
            _ => None,
        }
    }

    pub fn is_differentiable(&self) -> bool {
        matches!(self, Self::PowerSum { .. } | Self::Sum | Self::SmoothMax)
    }

    pub fn is_sum(&self) -> bool {
        matches!(self, Self::Sum)
    }

    pub fn is_max(&self) -> bool {
        matches!(self, Self::Max)
    }

    /// Value at `x` without validating the input.
    pub fn value_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Self::Sum => x.iter().sum(),
            Self::Site { index } => x[*index],
            Self::MinRatio => x.iter().copied().fold(f64::INFINITY, f64::min),
            Self::Max => x.iter().copied().fold(0.0, f64::max),
            Self::PowerSum { .. } | Self::SmoothMax => {
                let p = self.exponent().unwrap_or(1.0);
                let m = x.iter().copied().fold(0.0, f64::max);
                if m == 0.0 {
                    return 0.0;
                }
                m * x.iter().map(|v| (v / m).powf(p)).sum::<f64>().powf(1.0 / p)
            }
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if let Some(i) = x.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "component {i} must be nonnegative and finite, got {}",
                x[i]
            )));
        }
        if let Self::Site { index } = self {
            if *index >= x.len() {
                return Err(Error::Domain(format!(
                    "site index {index} out of range for {} sites",
                    x.len()
                )));
            }
        }
        if x.is_empty() {
            return Err(Error::Domain("empty vector".into()));
        }
        Ok(())
    }

    /// Gradient at `x` without validating the input.
    pub fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Sum => vec![1.0; x.len()],
            _ => {
                let p = self.exponent().unwrap_or(1.0);
                let r = self.value_unchecked(x);
                x.iter().map(|v| (v / r).powf(p - 1.0)).collect()
            }
        }
    }
}

pub fn eval_risk(r: &RiskFunctional, x: &[f64]) -> Result<f64> {
    r.check(x)?;
    Ok(r.value_unchecked(x))
}

pub fn risk_gradient(r: &RiskFunctional, x: &[f64]) -> Result<Vec<f64>> {
    if !r.is_differentiable() {
        return Err(Error::Capability(format!(
            "risk functional `{r}` is not differentiable"
        )));
    }
    r.check(x)?;
    if r.value_unchecked(x) == 0.0 {
        return Err(Error::Domain("gradient undefined at the origin".into()));
    }
    Ok(r.gradient_unchecked(x))
}

/// Whether `r(x / u) > 1`.
pub fn exceeds(r: &RiskFunctional, x: &[f64], u: &[f64]) -> bool {
    let scaled: Vec<f64> = x.iter().zip(u).map(|(a, b)| a / b).collect();
    r.value_unchecked(&scaled) > 1.0
}

impl fmt::Display for RiskFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerSum { exponent } => write!(f, "powsum:{exponent}"),
            Self::Sum => write!(f, "sum"),
            Self::SmoothMax => write!(f, "smoothmax"),
            Self::Site { index } => write!(f, "site:{index}"),
            Self::MinRatio => write!(f, "minratio"),
            Self::Max => write!(f, "max"),
        }
    }
}

/// Parses `sum`, `powsum:<p>`, `smoothmax`, `site:<index>`, `minratio` or `max`.
/// Site identifiers are resolved by the caller; here the index must be numeric.
impl FromStr for RiskFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sum" => return Ok(Self::Sum),
            "smoothmax" => return Ok(Self::SmoothMax),
            "minratio" => return Ok(Self::MinRatio),
            "max" => return Ok(Self::Max),
            _ => {}
        }
        if let Some(p) = s.strip_prefix("powsum:") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::Parse(format!("invalid power-sum exponent `{p}`")))?;
            return Self::power_sum(p);
        }
        if let Some(i) = s.strip_prefix("site:") {
            let index = i
                .parse()
                .map_err(|_| Error::Parse(format!("invalid site index `{i}`")))?;
            return Ok(Self::Site { index });
        }
        Err(Error::Parse(format!("unknown risk functional `{s}`")))
    }
}
