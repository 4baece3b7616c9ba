//! Fit criteria: spectral log-likelihood, censored log-likelihood and the
//! weighted gradient score.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::br_model::{precompute, BrPrecomputed, CensoredModel};
use crate::error::{Error, Result};
use crate::mvn_qmc::QmcConfig;
use crate::risk::{exceeds, RiskFunctional};
use crate::variogram::{Location, VariogramParams};

/// Normalized observations whose risk exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSet {
    pub events: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub risk: RiskFunctional,
    /// Number of observations the events were selected from.
    pub n_total: usize,
}

impl ExceedanceSet {
    pub fn new(
        events: Vec<Vec<f64>>,
        u: Vec<f64>,
        risk: RiskFunctional,
        n_total: usize,
    ) -> Result<Self> {
        if let Some(i) = u.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "threshold component {i} must be positive"
            )));
        }
        for (m, e) in events.iter().enumerate() {
            if e.len() != u.len() {
                return Err(Error::Domain(format!(
                    "event {m} has {} components, expected {}",
                    e.len(),
                    u.len()
                )));
            }
            if !exceeds(&risk, e, &u) {
                return Err(Error::Precondition(format!(
                    "event {m} does not exceed the threshold"
                )));
            }
        }
        Ok(Self {
            events,
            u,
            risk,
            n_total,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// The events at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            events: indices.iter().map(|&i| self.events[i].clone()).collect(),
            u: self.u.clone(),
            risk: self.risk.clone(),
            n_total: self.n_total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// `w_i = x_i W(x)`.
    W1,
    /// `w_i = (1 − exp(−3(x_i − u_i)/u_i))₊ W(x)`; components at or below
    /// their threshold get zero weight.
    W2,
}

/// Weights of the gradient score.
///
/// `W(x) = 1 − exp(−(r(x/u) − 1))` vanishes on the boundary of the
/// exceedance region. With `boundary_corrected = false` the radial factor is
/// `1 − exp(−r(x/u) − 1)` instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub kind: WeightKind,
    pub boundary_corrected: bool,
}

impl WeightFunction {
    pub fn new(kind: WeightKind) -> Self {
        Self {
            kind,
            boundary_corrected: true,
        }
    }
}

/// Weight values and their partials `∂w_i/∂x_i`.
pub fn eval_weights(
    w: &WeightFunction,
    risk: &RiskFunctional,
    x: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !risk.is_differentiable() {
        return Err(Error::Capability(format!(
            "gradient score needs a differentiable risk functional, got `{risk}`"
        )));
    }
    let scaled: Vec<f64> = x.iter().zip(u).map(|(a, b)| a / b).collect();
    let r = risk.value_unchecked(&scaled);
    let dr = risk.gradient_unchecked(&scaled);
    let decay = if w.boundary_corrected {
        (-(r - 1.0)).exp()
    } else {
        (-r - 1.0).exp()
    };
    let radial = 1.0 - decay;
    let mut values = Vec::with_capacity(x.len());
    let mut partials = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let d_radial = decay * dr[i] / u[i];
        match w.kind {
            WeightKind::W1 => {
                values.push(x[i] * radial);
                partials.push(radial + x[i] * d_radial);
            }
            WeightKind::W2 if x[i] <= u[i] => {
                values.push(0.0);
                partials.push(0.0);
            }
            WeightKind::W2 => {
                let e = (-3.0 * (x[i] - u[i]) / u[i]).exp();
                values.push((1.0 - e) * radial);
                partials.push(3.0 * e / u[i] * radial + (1.0 - e) * d_radial);
            }
        }
    }
    Ok((values, partials))
}

fn check_event(m: usize, x: &[f64]) -> Result<()> {
    if let Some(i) = x.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "event {m} has non-positive component {i} ({})",
            x[i]
        )));
    }
    Ok(())
}

/// `log λ` of each event.
pub fn spectral_terms(pre: &BrPrecomputed, exc: &ExceedanceSet) -> Result<Vec<f64>> {
    if !exc.risk.is_sum() {
        return Err(Error::Capability(format!(
            "spectral likelihood needs the sum risk functional, got `{}`",
            exc.risk
        )));
    }
    exc.events
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            check_event(m, x)?;
            let l = DVector::from_iterator(x.len(), x.iter().map(|v| v.ln()));
            Ok(pre.log_intensity_at_log(&l))
        })
        .collect()
}

/// Spectral log-likelihood without its parameter-free normalizer.
pub fn spectral_loglik(
    params: &VariogramParams,
    sites: &[Location],
    exc: &ExceedanceSet,
) -> Result<f64> {
    let pre = precompute(params, sites)?;
    Ok(spectral_terms(&pre, exc)?.iter().sum())
}

/// Gradient score contribution `δ` of each event; smaller is better.
pub fn gradient_score_terms(
    pre: &BrPrecomputed,
    exc: &ExceedanceSet,
    w: &WeightFunction,
) -> Result<Vec<f64>> {
    if !exc.risk.is_differentiable() {
        return Err(Error::Capability(format!(
            "gradient score needs a differentiable risk functional, got `{}`",
            exc.risk
        )));
    }
    exc.events
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            check_event(m, x)?;
            let sc = pre.score_components(x)?;
            let (wv, wd) = eval_weights(w, &exc.risk, x, &exc.u)?;
            Ok((0..x.len())
                .map(|i| {
                    let g = sc.gradient[i];
                    2.0 * wv[i] * wd[i] * g + wv[i] * wv[i] * (sc.hessian_diag[i] + 0.5 * g * g)
                })
                .sum())
        })
        .collect()
}

/// Weighted gradient score summed over events. The score is a loss: the
/// true parameter minimizes its expectation.
pub fn gradient_score(
    params: &VariogramParams,
    sites: &[Location],
    exc: &ExceedanceSet,
    w: &WeightFunction,
) -> Result<f64> {
    let pre = precompute(params, sites)?;
    Ok(gradient_score_terms(&pre, exc, w)?.iter().sum())
}

/// Censored log-density of each event. Event `m` uses QMC stream `m`.
pub fn censored_terms(model: &CensoredModel, exc: &ExceedanceSet) -> Result<Vec<f64>> {
    exc.events
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            check_event(m, x)?;
            model.log_density(x, m as u64)
        })
        .collect()
}

/// Censored log-likelihood with per-coordinate thresholds `exc.u`.
pub fn censored_objective(
    params: &VariogramParams,
    sites: &[Location],
    exc: &ExceedanceSet,
    qmc: &QmcConfig,
) -> Result<f64> {
    let model = CensoredModel::from_sites(params, sites, &exc.u, *qmc)?;
    Ok(censored_terms(&model, exc)?.iter().sum())
}

/// A fit criterion oriented so that larger values are better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Objective {
    Spectral,
    Censored { qmc: QmcConfig },
    GradientScore { weights: WeightFunction },
}

impl Objective {
    /// Per-event contributions; their sum is the objective.
    pub fn per_event(
        &self,
        params: &VariogramParams,
        sites: &[Location],
        exc: &ExceedanceSet,
    ) -> Result<Vec<f64>> {
        match self {
            Self::Spectral => spectral_terms(&precompute(params, sites)?, exc),
            Self::Censored { qmc } => {
                let model = CensoredModel::from_sites(params, sites, &exc.u, *qmc)?;
                censored_terms(&model, exc)
            }
            Self::GradientScore { weights } => {
                let terms = gradient_score_terms(&precompute(params, sites)?, exc, weights)?;
                Ok(terms.into_iter().map(|d| -d).collect())
            }
        }
    }

    pub fn evaluate(
        &self,
        params: &VariogramParams,
        sites: &[Location],
        exc: &ExceedanceSet,
    ) -> Result<f64> {
        Ok(self.per_event(params, sites, exc)?.iter().sum())
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Self::Censored { .. })
    }

    /// Same objective with a different QMC seed; other objectives are unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Self::Censored { qmc } => Self::Censored {
                qmc: qmc.with_seed(seed),
            },
            other => other,
        }
    }

    /// Checks that the exceedance set suits this objective.
    pub fn check(&self, exc: &ExceedanceSet) -> Result<()> {
        match self {
            Self::Spectral if !exc.risk.is_sum() => Err(Error::Capability(format!(
                "spectral likelihood needs the sum risk functional, got `{}`",
                exc.risk
            ))),
            Self::Censored { .. } if !exc.risk.is_max() => Err(Error::Capability(format!(
                "censored likelihood needs the max risk functional, got `{}`",
                exc.risk
            ))),
            Self::GradientScore { .. } if !exc.risk.is_differentiable() => {
                Err(Error::Capability(format!(
                    "gradient score needs a differentiable risk functional, got `{}`",
                    exc.risk
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Spectral => write!(f, "spectral"),
            Self::Censored { .. } => write!(f, "censored"),
            Self::GradientScore { weights } => match weights.kind {
                WeightKind::W1 => write!(f, "gradscore:w1"),
                WeightKind::W2 => write!(f, "gradscore:w2"),
            },
        }
    }
}

/// Parses `spectral`, `censored`, `gradscore:w1` or `gradscore:w2`; the
/// censored objective gets the default QMC configuration.
impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "spectral" => Ok(Self::Spectral),
            "censored" => Ok(Self::Censored {
                qmc: QmcConfig::default(),
            }),
            "gradscore:w1" => Ok(Self::GradientScore {
                weights: WeightFunction::new(WeightKind::W1),
            }),
            "gradscore:w2" => Ok(Self::GradientScore {
                weights: WeightFunction::new(WeightKind::W2),
            }),
            other => Err(Error::Parse(format!("unknown objective `{other}`"))),
        }
    }
}
